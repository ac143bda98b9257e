"""Geometric-stability targets from depth maps and the L1 stability loss."""
from dataclasses import dataclass

import numpy as np

from gess.numerics import ShapeError, filter2d

GAUSS_SIZE = 5
GAUSS_SIGMA = 1.0

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class StabilityConstants:
    alpha_delta: float = 2.0
    alpha_l: float = 1.0
    gamma: float = 3.0
    epsilon: float = 0.2

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        if self.alpha_delta < 0 or self.alpha_l < 0:
            raise ValueError("alpha weights must be non-negative")


def gaussian_kernel(size=GAUSS_SIZE, sigma=GAUSS_SIGMA):
    """Normalised 2-D Gaussian, ``size x size``, summing to 1."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def preprocess_depth(d):
    """Min-max normalise to [0, 1] (constant maps become zeros), then Gaussian-smooth."""
    d = np.asarray(d, dtype=np.float64)
    if not np.isfinite(d).all():
        raise ValueError("depth map contains non-finite values")
    lo, hi = d.min(), d.max()
    norm = (d - lo) / (hi - lo) if hi > lo else np.zeros_like(d)
    return filter2d(norm, gaussian_kernel())


def sobel_magnitude(d):
    gx = filter2d(d, SOBEL_X)
    gy = filter2d(d, SOBEL_Y)
    return np.sqrt(gx * gx + gy * gy)


def laplacian_response(d):
    return np.abs(filter2d(d, LAPLACIAN))


def stability_target(delta, lap, k: StabilityConstants = StabilityConstants()):
    delta = np.asarray(delta, dtype=np.float64)
    lap = np.asarray(lap, dtype=np.float64)
    if delta.shape != lap.shape:
        raise ShapeError("map shape", delta.shape, lap.shape, "stability_target")
    decay = np.exp(-k.gamma * (k.alpha_delta * delta + k.alpha_l * lap))
    return k.epsilon + (1.0 - k.epsilon) * decay


def stability_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("map shape", target.shape, pred.shape, "stability_loss")
    return float(np.mean(np.abs(pred - target)))


def depth_to_reliability(d, k: StabilityConstants = StabilityConstants()):
    p = preprocess_depth(d)
    return stability_target(sobel_magnitude(p), laplacian_response(p), k)
