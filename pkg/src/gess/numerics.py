"""Dense-tensor helpers shared by every other module.

Tensors are plain numpy arrays laid out channel-first (``[C, H, W]``). Storage
is float32 by convention; anything that accumulates (losses, gradients,
oracles) runs in float64. Functions return the promoted dtype of their inputs,
never narrower than float32.
"""
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from gess import kernels

BN_EPS = 1e-5


class ShapeError(ValueError):
    """Raised when two operands disagree along a named axis."""

    def __init__(self, axis, expected, got, where=""):
        self.axis = axis
        self.expected = expected
        self.got = got
        prefix = f"{where}: " if where else ""
        super().__init__(f"{prefix}{axis} mismatch (expected {expected}, got {got})")


def _out_dtype(*arrays):
    return np.result_type(*[np.asarray(a).dtype for a in arrays], np.float32)


@dataclass
class ConvSpec:
    """Weights of one 2-D convolution: kernel ``[C_out, C_in, kH, kW]`` and bias ``[C_out]``."""

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int | None = None  # None -> "same" padding, k // 2

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel)
        self.bias = np.asarray(self.bias)
        if self.kernel.ndim != 4:
            raise ShapeError("kernel rank", 4, self.kernel.ndim, "ConvSpec")
        c_out, _, kh, kw = self.kernel.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"ConvSpec: kernel extents must be odd, got {kh}x{kw}")
        if self.bias.shape != (c_out,):
            raise ShapeError("bias length", c_out, self.bias.shape, "ConvSpec")
        if self.stride < 1:
            raise ValueError("ConvSpec: stride must be positive")
        if self.padding is None:
            self.padding = kh // 2
        if self.padding < 0:
            raise ValueError("ConvSpec: padding must be non-negative")

    @property
    def in_channels(self):
        return self.kernel.shape[1]

    @property
    def out_channels(self):
        return self.kernel.shape[0]

    @classmethod
    def zeros(cls, c_out, c_in, k=1, dtype=np.float32):
        return cls(np.zeros((c_out, c_in, k, k), dtype), np.zeros(c_out, dtype))


@dataclass
class BatchNorm:
    """Inference-form batch normalisation: ``gamma * (x - mean) / sqrt(var + eps) + beta``."""

    mean: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = field(default=BN_EPS)

    @classmethod
    def identity(cls, channels, dtype=np.float32):
        # var chosen so that the normaliser is exactly 1
        return cls(np.zeros(channels, dtype), np.full(channels, 1.0 - BN_EPS, np.float64),
                   np.ones(channels, dtype), np.zeros(channels, dtype))

    def __call__(self, x):
        x = np.asarray(x)
        c = x.shape[0]
        for name in ("mean", "var", "gamma", "beta"):
            if np.shape(getattr(self, name)) != (c,):
                raise ShapeError(f"batchnorm {name} length", c, np.shape(getattr(self, name)))
        scale = np.asarray(self.gamma, np.float64) / np.sqrt(np.asarray(self.var, np.float64) + self.eps)
        out = (x - np.asarray(self.mean, np.float64)[:, None, None]) * scale[:, None, None]
        out = out + np.asarray(self.beta, np.float64)[:, None, None]
        return out.astype(_out_dtype(x, self.gamma))


def conv2d(x, spec: ConvSpec):
    """Zero-padded cross-correlation of a ``[C_in, H, W]`` tensor."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError("input rank", 3, x.ndim, "conv2d")
    if x.shape[0] != spec.in_channels:
        raise ShapeError("channel axis", spec.in_channels, x.shape[0], "conv2d")
    _, kh, kw = spec.kernel.shape[1:]
    p, s = spec.padding, spec.stride
    for axis, n, k in (("height axis", x.shape[1], kh), ("width axis", x.shape[2], kw)):
        span = n + 2 * p - k
        if span < 0 or span % s:
            raise ShapeError(axis, f"(n + 2*{p} - {k}) divisible by {s}", n, "conv2d")
    out = kernels.conv2d(x, spec.kernel, spec.bias, s, p)
    return out.astype(_out_dtype(x, spec.kernel), copy=False)


def filter2d(img, k):
    """Zero-padded 'same' correlation of a single 2-D map with an odd 2-D kernel, in float64."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError("map rank", 2, img.ndim, "filter2d")
    spec = ConvSpec(np.asarray(k, np.float64)[None, None], np.zeros(1))
    return conv2d(img[None], spec)[0]


def sigmoid(x):
    x = np.asarray(x)
    xd = x.astype(np.float64)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out.astype(_out_dtype(x), copy=False)


def relu(x):
    x = np.asarray(x)
    return np.maximum(x, 0).astype(_out_dtype(x), copy=False)


def activate(x, mode):
    if mode == "sigmoid":
        return sigmoid(x)
    if mode == "relu":
        return relu(x)
    raise ValueError(f"unknown activation {mode!r}")


def global_avg_pool(x):
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError("input rank", 3, x.ndim, "global_avg_pool")
    return x.astype(np.float64).mean(axis=(1, 2)).astype(_out_dtype(x), copy=False)


def _align_corner_coords(n_in, n_out):
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def bilinear_resample(x, out_h, out_w):
    """Align-corners bilinear resize of a ``[C, H, W]`` tensor (a 2-D map is also accepted)."""
    x = np.asarray(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError("input rank", 3, x.ndim, "bilinear_resample")
    if out_h < 1 or out_w < 1:
        raise ValueError("bilinear_resample: output extents must be >= 1")
    c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        out = x.copy()
    else:
        ys = _align_corner_coords(h, out_h)
        xs = _align_corner_coords(w, out_w)
        y0 = np.minimum(np.floor(ys).astype(int), h - 1)
        x0 = np.minimum(np.floor(xs).astype(int), w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        wy = (ys - y0)[:, None]
        wx = (xs - x0)[None, :]
        xd = x.astype(np.float64)
        top = xd[:, y0][:, :, x0] * (1 - wx) + xd[:, y0][:, :, x1] * wx
        bot = xd[:, y1][:, :, x0] * (1 - wx) + xd[:, y1][:, :, x1] * wx
        out = (top * (1 - wy) + bot * wy).astype(_out_dtype(x), copy=False)
    return out[0] if squeeze else out


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, h=1e-4):
    """Central-difference gradient of a scalar function, evaluated in float64."""
    if h <= 0:
        raise ValueError("step size must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at element {i}")
        gflat[i] = (fp - fm) / (2 * h)
    return grad
