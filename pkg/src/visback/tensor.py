"""Dense rank-3 tensors (channels x height x width) and the numeric kernels
the forward pass and the mask backprojection need.

Everything is float32, channel-major, row-major. Operations are pure: they
never mutate their inputs and return freshly allocated tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible; names the offending axis."""


@dataclass(frozen=True)
class Tensor:
    """Immutable (channels, height, width) array of float32.

    Construction copies the input array; use the classmethods for common cases.
    The wrapped array is marked read-only, so slices of ``data`` are safe to
    hand out and tensors can be shared across threads.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True, order="C")
        if arr.ndim != 3:
            raise ShapeError(f"tensor must be rank 3 (channels, height, width), got rank {arr.ndim}")
        if min(arr.shape) < 1:
            raise ShapeError(f"all tensor dimensions must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("tensor elements must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        """Adopt a float32 C-order array we own, skipping the defensive copy."""
        t = object.__new__(cls)
        if not np.isfinite(arr).all():
            raise ValueError("tensor elements must be finite")
        arr.flags.writeable = False
        object.__setattr__(t, "data", arr)
        return t

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "Tensor":
        return cls._wrap(np.zeros((channels, height, width), dtype=np.float32))

    @classmethod
    def full(cls, channels: int, height: int, width: int, value: float) -> "Tensor":
        return cls._wrap(np.full((channels, height, width), value, dtype=np.float32))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def flat(self) -> np.ndarray:
        """Flat copy in channel-major, row-major order."""
        return self.data.reshape(-1).copy()


@dataclass(frozen=True)
class ConvGeometry:
    """Kernel/stride/channel description of one convolutional layer."""

    kernel_h: int
    kernel_w: int
    stride_h: int
    stride_w: int
    in_channels: int
    out_channels: int

    def __post_init__(self):
        for name in ("kernel_h", "kernel_w", "stride_h", "stride_w", "in_channels", "out_channels"):
            if getattr(self, name) < 1:
                raise ShapeError(f"ConvGeometry.{name} must be >= 1")

    def output_hw(self, height: int, width: int) -> tuple[int, int]:
        """Spatial output size of a valid (unpadded) convolution on height x width."""
        if height < self.kernel_h:
            raise ShapeError(f"input height {height} smaller than kernel height {self.kernel_h}")
        if width < self.kernel_w:
            raise ShapeError(f"input width {width} smaller than kernel width {self.kernel_w}")
        return (height - self.kernel_h) // self.stride_h + 1, (width - self.kernel_w) // self.stride_w + 1

    def weight_count(self) -> int:
        return self.out_channels * self.in_channels * self.kernel_h * self.kernel_w


def conv2d(inp: Tensor, weights: np.ndarray, geometry: ConvGeometry, bias: np.ndarray) -> Tensor:
    """Valid-padding strided convolution.

    ``weights`` is flat, laid out (out_channels, in_channels, kernel_h,
    kernel_w) in C order; ``bias`` holds one float per output channel.
    """
    if inp.channels != geometry.in_channels:
        raise ShapeError(
            f"channel axis mismatch: input has {inp.channels} channels, geometry expects {geometry.in_channels}"
        )
    w = np.asarray(weights, dtype=np.float32)
    if w.size != geometry.weight_count():
        raise ShapeError(f"weight length {w.size} != expected {geometry.weight_count()}")
    b = np.asarray(bias, dtype=np.float32)
    if b.size != geometry.out_channels:
        raise ShapeError(f"bias length {b.size} != out_channels {geometry.out_channels}")
    w4 = w.reshape(geometry.out_channels, geometry.in_channels, geometry.kernel_h, geometry.kernel_w)
    out_h, out_w = geometry.output_hw(inp.height, inp.width)

    win = np.lib.stride_tricks.sliding_window_view(inp.data, (geometry.kernel_h, geometry.kernel_w), axis=(1, 2))
    win = win[:, :: geometry.stride_h, :: geometry.stride_w]  # (Ci, Ho, Wo, Kh, Kw)
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(out_h * out_w, -1)
    y = cols @ w4.reshape(geometry.out_channels, -1).T + b
    return Tensor._wrap(np.ascontiguousarray(y.reshape(out_h, out_w, geometry.out_channels).transpose(2, 0, 1)))


def fully_connected(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map y = W x + b for a flat input vector and a (units, len(x)) matrix."""
    xv = np.asarray(x, dtype=np.float32).reshape(-1)
    w = np.asarray(weights, dtype=np.float32)
    if w.ndim != 2:
        raise ShapeError(f"weight matrix must be rank 2, got rank {w.ndim}")
    b = np.asarray(bias, dtype=np.float32).reshape(-1)
    if w.shape[1] != xv.size:
        raise ShapeError(f"input length {xv.size} != weight row length {w.shape[1]}")
    if w.shape[0] != b.size:
        raise ShapeError(f"bias length {b.size} != unit count {w.shape[0]}")
    return (w @ xv + b).astype(np.float32)


def channel_mean(t: Tensor) -> Tensor:
    """Average the channels into a single map (the per-layer feature-map mean)."""
    # float64 accumulation so the result is independent of channel count quirks
    m = t.data.sum(axis=0, dtype=np.float64) / t.channels
    return Tensor._wrap(m.astype(np.float32)[np.newaxis])


def deconv_upscale(t: Tensor, geometry: ConvGeometry, target_h: int, target_w: int) -> Tensor:
    """Upscale a single-channel map with a unit-weight, zero-bias transposed convolution.

    Each input value is spread over the kernel_h x kernel_w footprint its
    position would have covered in the forward convolution, and overlapping
    footprints sum. The natural output size is (h-1)*stride + kernel; the
    requested target may exceed it by at most stride-1 per axis (the forward
    floor division loses that much), and the excess rows/columns stay zero.
    """
    if t.channels != 1:
        raise ShapeError(f"deconv_upscale expects a single-channel map, got {t.channels} channels")
    nat_h = (t.height - 1) * geometry.stride_h + geometry.kernel_h
    nat_w = (t.width - 1) * geometry.stride_w + geometry.kernel_w
    if not 0 <= target_h - nat_h < geometry.stride_h:
        raise ShapeError(
            f"target height {target_h} unreachable from natural height {nat_h} with stride {geometry.stride_h}"
        )
    if not 0 <= target_w - nat_w < geometry.stride_w:
        raise ShapeError(
            f"target width {target_w} unreachable from natural width {nat_w} with stride {geometry.stride_w}"
        )
    out = np.zeros((target_h, target_w), dtype=np.float32)
    m = t.data[0]
    sh, sw = geometry.stride_h, geometry.stride_w
    span_h = (t.height - 1) * sh + 1
    span_w = (t.width - 1) * sw + 1
    for ki in range(geometry.kernel_h):
        for kj in range(geometry.kernel_w):
            out[ki : ki + span_h : sh, kj : kj + span_w : sw] += m
    return Tensor._wrap(out[np.newaxis])


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise product of two identically shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch for elementwise product: {a.shape} vs {b.shape}")
    return Tensor._wrap(a.data * b.data)


def normalize_01(t: Tensor) -> Tensor:
    """Rescale to [0, 1] by (x - min) / (max - min); a constant tensor maps to all zeros."""
    lo = float(t.data.min())
    hi = float(t.data.max())
    if hi == lo:
        return Tensor.zeros(*t.shape)
    return Tensor._wrap((t.data - np.float32(lo)) / (np.float32(hi) - np.float32(lo)))


def relu(t: Tensor) -> Tensor:
    """Pointwise max(0, x)."""
    return Tensor._wrap(np.maximum(t.data, np.float32(0.0)))
