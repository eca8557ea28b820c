"""Forward pass with activation tracing, and the training-grade backward pass.

Two execution paths share the layer semantics:

* ``forward`` runs one image through the tensor-core kernels and records the
  post-activation feature maps of every conv layer (plus the normalized
  input); this trace is what the mask backprojection consumes.
* A batched array path (``_run_batch`` / ``_loss_and_grads_batch``) powers
  ``backward`` and the SGD loop, trading object overhead for GEMM throughput.

Both are deterministic functions of (config, weights, input).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .config import ConfigError, NetworkConfig, validate_config
from .tensor import ConvGeometry, ShapeError, Tensor
from .weights import WeightSet

NORMALIZATION_SCALE = 127.5  # x / 127.5 - 1 maps [0, 255] onto [-1, 1]


class InputRangeError(ValueError):
    """Raised when an image fed to the normalization layer leaves [0, 255]."""


class NonFiniteOutputError(ArithmeticError):
    """Raised when a forward pass produces NaN or infinity."""


@dataclass(frozen=True)
class SteeringOutput:
    """Network output: inverse turning radius, 1/meters. Positive steers right."""

    inverse_turning_radius: float

    def __post_init__(self):
        if not np.isfinite(self.inverse_turning_radius):
            raise NonFiniteOutputError("steering output is not finite")


@dataclass(frozen=True)
class ActivationTrace:
    """Post-activation record of one forward pass.

    ``entries[0]`` is the input after normalization (layer index -1 when the
    config has no normalization layer); the remaining entries are the conv
    layers' post-activation maps in network order.
    """

    entries: tuple[tuple[int, Tensor], ...]

    @property
    def normalized_input(self) -> Tensor:
        return self.entries[0][1]

    @property
    def conv_entries(self) -> tuple[tuple[int, Tensor], ...]:
        return self.entries[1:]


def normalize_input(image: Tensor) -> Tensor:
    """Hard-coded input normalization: x / 127.5 - 1. Never trained."""
    lo, hi = float(image.data.min()), float(image.data.max())
    if lo < 0.0 or hi > 255.0:
        raise InputRangeError(f"image values must lie in [0, 255], got [{lo}, {hi}]")
    return Tensor._wrap(image.data / np.float32(NORMALIZATION_SCALE) - np.float32(1.0))


def _apply_activation(t: Tensor, activation: str) -> Tensor:
    return tc.relu(t) if activation == "relu" else t


def forward(cfg: NetworkConfig, weights: WeightSet, image: Tensor) -> tuple[SteeringOutput, ActivationTrace]:
    """Run one image through the network; returns the steering value and the trace."""
    if weights.config != cfg:
        raise ConfigError("weight set was built for a different config")
    validate_config(cfg)
    if image.shape != cfg.input_shape:
        raise ShapeError(f"image shape {image.shape} != config input shape {cfg.input_shape}")

    entries: list[tuple[int, Tensor]] = []
    current: Tensor | np.ndarray = image
    flattened = False
    for i, layer in enumerate(cfg.layers):
        if layer.kind == "normalization":
            current = normalize_input(current)
            entries.append((i, current))
        elif layer.kind == "conv":
            out = tc.conv2d(current, weights.weight(i), layer.geometry, weights.bias(i))
            current = _apply_activation(out, layer.activation)
            entries.append((i, current))
        else:
            if not flattened:
                current = current.data.reshape(-1) if isinstance(current, Tensor) else current
                flattened = True
            w2 = weights.weight(i).reshape(layer.units, -1)
            out = tc.fully_connected(current, w2, weights.bias(i))
            current = np.maximum(out, np.float32(0.0)) if layer.activation == "relu" else out

    if not entries or cfg.layers[0].kind != "normalization":
        entries.insert(0, (-1, image))
    pred = float(np.asarray(current).reshape(-1)[0])
    return SteeringOutput(pred), ActivationTrace(tuple(entries))


# --- batched array path ----------------------------------------------------

def _conv_forward_batch(x: np.ndarray, w4: np.ndarray, b: np.ndarray, g: ConvGeometry):
    """Valid strided conv on (N, Ci, H, W); returns output and the im2col matrix."""
    n = x.shape[0]
    oh, ow = g.output_hw(x.shape[2], x.shape[3])
    win = np.lib.stride_tricks.sliding_window_view(x, (g.kernel_h, g.kernel_w), axis=(2, 3))
    win = win[:, :, :: g.stride_h, :: g.stride_w]  # (N, Ci, Ho, Wo, Kh, Kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, -1)
    y = cols @ w4.reshape(g.out_channels, -1).T + b
    return np.ascontiguousarray(y.reshape(n, oh, ow, g.out_channels).transpose(0, 3, 1, 2)), cols


def _conv_input_grad(dyr: np.ndarray, w4: np.ndarray, g: ConvGeometry, n: int, in_hw, out_hw) -> np.ndarray:
    """Scatter the column gradient back onto the (N, Ci, H, W) input grid."""
    h, w = in_hw
    oh, ow = out_hw
    dcols = dyr @ w4.reshape(g.out_channels, -1)  # (N*Ho*Wo, Ci*Kh*Kw)
    dwin = dcols.reshape(n, oh, ow, g.in_channels, g.kernel_h, g.kernel_w)
    dwin = np.ascontiguousarray(dwin.transpose(0, 3, 4, 5, 1, 2))  # (N, Ci, Kh, Kw, Ho, Wo)
    dx = np.zeros((n, g.in_channels, h, w), dtype=np.float32)
    span_h = (oh - 1) * g.stride_h + 1
    span_w = (ow - 1) * g.stride_w + 1
    for ki in range(g.kernel_h):
        for kj in range(g.kernel_w):
            dx[:, :, ki : ki + span_h : g.stride_h, kj : kj + span_w : g.stride_w] += dwin[:, :, ki, kj]
    return dx


def _run_batch(cfg: NetworkConfig, weights: WeightSet, x: np.ndarray, want_cache: bool):
    """Forward a (N, C, H, W) float32 batch; optionally keep what backward needs."""
    if x.ndim != 4 or x.shape[1:] != cfg.input_shape:
        raise ShapeError(f"batch shape {x.shape} incompatible with config input {cfg.input_shape}")
    a = x
    cache: list[tuple] = []
    flattened = False
    for i, layer in enumerate(cfg.layers):
        if layer.kind == "normalization":
            lo, hi = float(a.min()), float(a.max())
            if lo < 0.0 or hi > 255.0:
                raise InputRangeError(f"image values must lie in [0, 255], got [{lo}, {hi}]")
            a = (a / np.float32(NORMALIZATION_SCALE) - np.float32(1.0)).astype(np.float32)
            cache.append(("normalization",))
        elif layer.kind == "conv":
            g = layer.geometry
            in_hw = a.shape[2:]
            w4 = weights.weight(i).reshape(g.out_channels, g.in_channels, g.kernel_h, g.kernel_w)
            z, cols = _conv_forward_batch(a, w4, weights.bias(i), g)
            mask = None
            if layer.activation == "relu":
                mask = z > 0
                z = np.where(mask, z, np.float32(0.0))
            cache.append(("conv", i, cols if want_cache else None, mask, in_hw, z.shape[2:]))
            a = z
        else:
            if not flattened:
                a = a.reshape(a.shape[0], -1)
                flattened = True
            w2 = weights.weight(i).reshape(layer.units, -1)
            z = a @ w2.T + weights.bias(i)
            mask = None
            if layer.activation == "relu":
                mask = z > 0
                z = np.where(mask, z, np.float32(0.0))
            cache.append(("fc", i, a if want_cache else None, mask))
            a = z
    preds = a.reshape(-1).astype(np.float32)
    return preds, cache if want_cache else None


def forward_batch(cfg: NetworkConfig, weights: WeightSet, images: np.ndarray) -> np.ndarray:
    """Steering predictions for a stack of images, (N, C, H, W) -> (N,)."""
    if weights.config != cfg:
        raise ConfigError("weight set was built for a different config")
    preds, _ = _run_batch(cfg, weights, np.ascontiguousarray(images, dtype=np.float32), want_cache=False)
    return preds


def _loss_and_grads_batch(cfg: NetworkConfig, weights: WeightSet, x: np.ndarray, targets: np.ndarray):
    """Mean squared error over the batch and its gradient for every parameter.

    Returns (loss, grads) with grads a dict layer index -> (dW flat, db). The
    normalization layer has no parameters and receives none.
    """
    n = x.shape[0]
    preds, cache = _run_batch(cfg, weights, x, want_cache=True)
    diff = preds - targets.astype(np.float32)
    loss = float(np.mean(diff.astype(np.float64) ** 2))

    grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    conv_positions = [k for k, c in enumerate(cache) if c[0] == "conv"]
    first_conv = conv_positions[0] if conv_positions else None

    upstream = (np.float32(2.0 / n) * diff).reshape(n, 1)  # d loss / d last-layer output
    for k in range(len(cache) - 1, -1, -1):
        entry = cache[k]
        if entry[0] == "fc":
            _, i, a_in, mask = entry
            layer = cfg.layers[i]
            if mask is not None:
                upstream = np.where(mask, upstream, np.float32(0.0))
            dw = upstream.T @ a_in  # (units, D)
            db = upstream.sum(axis=0)
            grads[i] = (dw.reshape(-1).astype(np.float32), db.astype(np.float32))
            w2 = weights.weight(i).reshape(layer.units, -1)
            upstream = upstream @ w2  # (N, D)
            if k > 0 and cache[k - 1][0] == "conv":
                co, oh, ow = validate_config(cfg)[cache[k - 1][1]].output_shape
                upstream = upstream.reshape(n, co, oh, ow)
        elif entry[0] == "conv":
            _, i, cols, mask, in_hw, out_hw = entry
            g = cfg.layers[i].geometry
            if mask is not None:
                upstream = np.where(mask, upstream, np.float32(0.0))
            oh, ow = out_hw
            dyr = np.ascontiguousarray(upstream.transpose(0, 2, 3, 1)).reshape(n * oh * ow, g.out_channels)
            dw = dyr.T @ cols  # (Co, Ci*Kh*Kw)
            db = dyr.sum(axis=0)
            grads[i] = (dw.reshape(-1).astype(np.float32), db.astype(np.float32))
            if k != first_conv:
                w4 = weights.weight(i).reshape(g.out_channels, g.in_channels, g.kernel_h, g.kernel_w)
                upstream = _conv_input_grad(dyr, w4, g, n, in_hw, out_hw)
        else:  # normalization: fixed, no parameters, nothing below it
            break
    return loss, grads


def backward(cfg: NetworkConfig, weights: WeightSet, image: Tensor, target: float):
    """Squared-error loss for one image and its gradient as a WeightSet.

    loss = (prediction - target)^2; the normalization layer gets no gradient.
    Returns (gradients, loss).
    """
    if weights.config != cfg:
        raise ConfigError("weight set was built for a different config")
    if image.shape != cfg.input_shape:
        raise ShapeError(f"image shape {image.shape} != config input shape {cfg.input_shape}")
    loss, grads = _loss_and_grads_batch(cfg, weights, image.data[np.newaxis], np.asarray([target]))
    return WeightSet(cfg, grads), loss
