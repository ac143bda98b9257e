"""Coupled normal/saliency prediction: one 3-vector per pixel whose direction is the
surface normal and whose length is the semantic saliency.

All losses and gradients are computed in float64.
"""
from dataclasses import dataclass

import numpy as np

from gess.depth_stability import stability_loss
from gess.numerics import ShapeError

NUM_CLASSES = 4
NORM_FLOOR = 1e-8  # decompose() clamps the denominator here
GRAD_MIN_NORM = 1e-6  # coupled_gradient() refuses pixels at or below this length
PROB_FLOOR = 1e-12
GRAD_DOT_CLAMP = 1.0 - 1e-6


@dataclass
class SaliencyClassifierParams:
    """Per-pixel affine map from saliency to class logits: ``logit_m = weights[m] * s + biases[m]``."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.biases = np.asarray(self.biases, dtype=np.float64).reshape(-1)
        if self.weights.shape != (NUM_CLASSES,) or self.biases.shape != (NUM_CLASSES,):
            raise ShapeError("classifier parameter length", NUM_CLASSES,
                             (self.weights.size, self.biases.size))
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ValueError("classifier parameters must be finite")

    @classmethod
    def zeros(cls):
        return cls(np.zeros(NUM_CLASSES), np.zeros(NUM_CLASSES))


@dataclass(frozen=True)
class SemanticWeightTable:
    """Reliability weight per semantic class (stable, medium, low, dynamic)."""

    weights: tuple = (1.0, 0.7, 0.4, 0.1)

    def __post_init__(self):
        if len(self.weights) != NUM_CLASSES:
            raise ValueError(f"need {NUM_CLASSES} class weights, got {len(self.weights)}")
        if any(not 0.0 <= w <= 1.0 for w in self.weights):
            raise ValueError(f"class weights must lie in [0, 1], got {self.weights}")

    def __getitem__(self, m):
        return self.weights[m]

    def as_array(self):
        return np.asarray(self.weights, dtype=np.float64)


def check_labels(labels):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ShapeError("label map rank", 2, labels.ndim)
    as_int = labels.astype(np.int64)
    if not np.array_equal(as_int, labels) or as_int.min() < 0 or as_int.max() >= NUM_CLASSES:
        raise ValueError(f"labels must be integers in 0..{NUM_CLASSES - 1}")
    return as_int


def _check_field(v, name="V"):
    v = np.asarray(v)
    if v.ndim != 3 or v.shape[0] != 3:
        raise ShapeError(f"{name} shape", "[3, H, W]", v.shape)
    return v


def decompose(V):
    """Split a vector field into (unit normals ``[3,H,W]``, saliency ``[H,W]``).

    Zero vectors yield a zero normal and zero saliency.
    """
    V = _check_field(V).astype(np.float64)
    s = np.sqrt(np.einsum("chw,chw->hw", V, V))
    n = V / np.maximum(s, NORM_FLOOR)
    return n, s


def classify_saliency(s, params: SaliencyClassifierParams):
    s = np.asarray(s, dtype=np.float64)
    logits = params.weights[:, None, None] * s[None] + params.biases[:, None, None]
    logits -= logits.max(axis=0, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=0, keepdims=True)


def normal_loss(n, n_star):
    """Mean angle (radians) between two normal fields."""
    n = _check_field(n, "n")
    n_star = _check_field(n_star, "n*")
    if n.shape != n_star.shape:
        raise ShapeError("normal map shape", n_star.shape, n.shape, "normal_loss")
    dot = np.einsum("chw,chw->hw", n.astype(np.float64), n_star.astype(np.float64))
    return float(np.mean(np.arccos(np.clip(dot, -1.0, 1.0))))


def seg_loss(probs, labels):
    """Cross-entropy of per-pixel class probabilities ``[4,H,W]`` against integer labels."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = check_labels(labels)
    if probs.ndim != 3 or probs.shape[0] != NUM_CLASSES:
        raise ShapeError("probability shape", f"[{NUM_CLASSES}, H, W]", probs.shape, "seg_loss")
    if probs.shape[1:] != labels.shape:
        raise ShapeError("spatial shape", labels.shape, probs.shape[1:], "seg_loss")
    p = np.take_along_axis(probs, labels[None], axis=0)[0]
    return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))


def fuse_labels(n_star, labels, table: SemanticWeightTable = SemanticWeightTable()):
    """Scale each pseudo-normal by its class reliability weight."""
    n_star = _check_field(n_star, "n*")
    labels = check_labels(labels)
    if n_star.shape[1:] != labels.shape:
        raise ShapeError("spatial shape", n_star.shape[1:], labels.shape, "fuse_labels")
    return table.as_array()[labels][None] * n_star.astype(np.float64)


def coupled_loss(V, params: SaliencyClassifierParams, labels, n_star):
    """Return ``(total, seg_term, normal_term)``; both terms carry unit weight."""
    n, s = decompose(V)
    seg = seg_loss(classify_saliency(s, params), labels)
    normal = normal_loss(n, n_star)
    return seg + normal, seg, normal


def coupled_gradient(V, params: SaliencyClassifierParams, labels, n_star):
    """Analytic gradient of :func:`coupled_loss` w.r.t. ``V``.

    Returns ``(grad, radial, tangential)`` with ``grad = radial + tangential``;
    the radial part is parallel to the normal and carries the saliency term, the
    tangential part is orthogonal to it and carries the angular term.
    """
    V = _check_field(V)
    labels = check_labels(labels)
    n_star = _check_field(n_star, "n*").astype(np.float64)
    if V.shape[1:] != labels.shape or n_star.shape != V.shape:
        raise ShapeError("spatial shape", V.shape, (labels.shape, n_star.shape), "coupled_gradient")
    n, s = decompose(V)
    bad = np.argwhere(s <= GRAD_MIN_NORM)
    if len(bad):
        coords = ", ".join(f"({y},{x})" for y, x in bad[:10])
        more = f" and {len(bad) - 10} more" if len(bad) > 10 else ""
        raise ValueError(f"vector length <= {GRAD_MIN_NORM} at pixel(s) {coords}{more}")
    count = s.size

    # d(-log p_y)/ds = sum_m p_m w_m - w_y; zero where the probability floor is active
    probs = classify_saliency(s, params)
    p_y = np.take_along_axis(probs, labels[None], axis=0)[0]
    dseg_ds = np.einsum("m,mhw->hw", params.weights, probs) - params.weights[labels]
    dseg_ds = np.where(p_y > PROB_FLOOR, dseg_ds, 0.0) / count
    radial = dseg_ds[None] * n

    # d arccos(d)/dn = -n* / sqrt(1 - d^2), projected onto the tangent plane and scaled by 1/s
    dot = np.clip(np.einsum("chw,chw->hw", n, n_star), -GRAD_DOT_CLAMP, GRAD_DOT_CLAMP)
    dnorm_dn = -n_star / np.sqrt(1.0 - dot * dot)[None] / count
    along = np.einsum("chw,chw->hw", n, dnorm_dn)
    tangential = (dnorm_dn - along[None] * n) / s[None]

    return radial + tangential, radial, tangential


def auxiliary_loss(V, params: SaliencyClassifierParams, labels, n_star, stability_pred, stability_target):
    """Sum of the three auxiliary terms: normal angle, segmentation and stability.

    Returns ``(total, terms)`` where ``terms`` maps ``normal``, ``seg`` and ``sta``
    to their values. Detector and descriptor losses are not included.
    """
    _, seg, normal = coupled_loss(V, params, labels, n_star)
    sta = stability_loss(stability_pred, stability_target)
    return normal + seg + sta, {"normal": normal, "seg": seg, "sta": sta}
