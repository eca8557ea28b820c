"""Salient-region mask built by backprojecting averaged feature maps.

The idea: regions that stay bright through *every* conv layer are the ones the
network actually used. Starting from the deepest layer, the channel-averaged
map is repeatedly upscaled to the resolution one layer below (unit-weight
transposed convolution with that layer's own kernel and stride) and multiplied
pointwise with the averaged map at that level. A final upscale through the
first conv layer's geometry lands on input resolution; min-max normalization
makes it a displayable [0, 1] mask. The input image itself never enters the
product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .config import NetworkConfig, validate_config
from .network import ActivationTrace
from .tensor import ShapeError, Tensor


class TraceMismatchError(ValueError):
    """Raised when an activation trace does not belong to the given config."""


@dataclass(frozen=True)
class VisualizationMask:
    """Single-channel [0, 1] mask at input resolution."""

    values: Tensor  # (1, H, W)

    def __post_init__(self):
        if self.values.channels != 1:
            raise ShapeError(f"mask must be single-channel, got {self.values.channels}")
        lo = float(self.values.data.min())
        hi = float(self.values.data.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"mask values must lie in [0, 1], got [{lo}, {hi}]")

    @property
    def data(self) -> np.ndarray:
        """The mask as a read-only (H, W) float32 array."""
        return self.values.data[0]

    @property
    def height(self) -> int:
        return self.values.height

    @property
    def width(self) -> int:
        return self.values.width


@dataclass(frozen=True)
class MaskTrace:
    """Intermediate mask per conv level, bottom (first conv) to top (deepest).

    The top entry is that level's averaged map itself; each lower entry is
    upscale(level above) * averaged(level), so sizes telescope down the stack
    exactly along the feature-map sizes.
    """

    masks: tuple[Tensor, ...]

    def __post_init__(self):
        if not self.masks:
            raise ValueError("mask trace cannot be empty")
        for m in self.masks:
            if m.channels != 1:
                raise ShapeError("intermediate masks must be single-channel")


def compute_mask(trace: ActivationTrace, cfg: NetworkConfig) -> tuple[VisualizationMask, MaskTrace]:
    """Backproject a forward trace into an input-resolution salience mask.

    Walking top-down through the conv stack: average each level's channels,
    upscale the running mask through each layer's own geometry (unit weights,
    zero bias), multiply with the averaged map below, and finally upscale the
    bottom intermediate mask to input size and min-max normalize. The raw
    input never multiplies into the chain.
    """
    shapes = validate_config(cfg)
    conv_indices = [i for i, layer in enumerate(cfg.layers) if layer.kind == "conv"]
    if not conv_indices:
        raise TraceMismatchError("config has no conv layers to backproject")

    entries = trace.conv_entries
    if [i for i, _ in entries] != conv_indices:
        raise TraceMismatchError(
            f"trace conv layers {[i for i, _ in entries]} != config conv layers {conv_indices}"
        )
    for i, t in entries:
        if t.shape != shapes[i].output_shape:
            raise TraceMismatchError(
                f"conv layer {i} activation shape {t.shape} != expected {shapes[i].output_shape}"
            )

    averaged = [tc.channel_mean(t) for _, t in entries]

    combined: list[Tensor] = [None] * (len(averaged) - 1) + [averaged[-1]]  # type: ignore[list-item]
    for j in range(len(averaged) - 2, -1, -1):
        geom = cfg.layers[conv_indices[j + 1]].geometry
        below = averaged[j]
        upscaled = tc.deconv_upscale(combined[j + 1], geom, below.height, below.width)
        combined[j] = tc.elementwise_mul(upscaled, below)

    first_geom = cfg.layers[conv_indices[0]].geometry
    projection = tc.deconv_upscale(combined[0], first_geom, cfg.input_height, cfg.input_width)
    mask = VisualizationMask(tc.normalize_01(projection))
    return mask, MaskTrace(tuple(combined))


def overlay(image_rgb: Tensor, mask: VisualizationMask, gain: float = 255.0) -> Tensor:
    """Highlight masked pixels by adding gain * mask to the green plane.

    The image is an RGB (3, H, W) tensor in [0, 255]; red and blue pass
    through untouched and the boosted green plane is clamped to [0, 255].
    """
    if image_rgb.channels != 3:
        raise ShapeError(f"overlay expects an RGB (3, H, W) tensor, got {image_rgb.channels} channels")
    if (image_rgb.height, image_rgb.width) != (mask.height, mask.width):
        raise ShapeError(
            f"image size {(image_rgb.height, image_rgb.width)} != mask size {(mask.height, mask.width)}"
        )
    out = image_rgb.data.copy()
    out[1] = np.clip(out[1] + np.float32(gain) * mask.data, 0.0, 255.0)
    return Tensor._wrap(out)


def mask_to_gray(mask: VisualizationMask) -> np.ndarray:
    """Quantize a [0, 1] mask to (H, W) uint8 for image export."""
    return np.clip(np.rint(mask.data * np.float32(255.0)), 0, 255).astype(np.uint8)
