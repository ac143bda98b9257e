"""Semantic/depth-aware keypoint selection and descriptor sampling.

The detector heatmap is boosted by a semantic saliency mask and a depth
reliability map, suppressed to local maxima, and the strongest survivors are
kept. Keypoints sit on integer pixel centres (no sub-pixel refinement).
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gess import gtf, kernels
from gess.numerics import ConvSpec, ShapeError, bilinear_resample, conv2d, sigmoid


@dataclass
class SdakParams:
    mask_conv: ConvSpec  # 3x3, semantic channels -> 1
    alpha: float = 1.0
    beta: float = 1.0
    nms_radius: int = 4
    top_k: int = 10000
    score_threshold: float = 0.0
    border_margin: int = 4

    def __post_init__(self):
        if self.mask_conv.out_channels != 1:
            raise ShapeError("mask conv output channels", 1, self.mask_conv.out_channels, "SdakParams")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.nms_radius < 1 or self.top_k < 1:
            raise ValueError("nms_radius and top_k must be >= 1")
        if self.score_threshold < 0 or self.border_margin < 0:
            raise ValueError("score_threshold and border_margin must be non-negative")

    @staticmethod
    def random_mask_conv(semantic_channels, seed=0):
        rng = np.random.default_rng(seed)
        b = 1.0 / np.sqrt(semantic_channels * 9)
        return ConvSpec(rng.uniform(-b, b, (1, semantic_channels, 3, 3)).astype(np.float32),
                        rng.uniform(-b, b, 1).astype(np.float32))

    def mask_tensors(self):
        return {"sdak_mask.kernel": (self.mask_conv.kernel, "semantic mask 3x3 kernel"),
                "sdak_mask.bias": (self.mask_conv.bias, "semantic mask bias")}


@dataclass(frozen=True, order=True)
class Keypoint:
    x: float
    y: float
    score: float = 0.0


@dataclass
class DescriptorSet:
    """Keypoints ``xy [N, 2]`` with ``scores [N]`` and unit descriptors ``[N, C]``."""

    xy: np.ndarray
    scores: np.ndarray
    descriptors: np.ndarray
    image_size: tuple = field(default=(0, 0))  # (width, height)

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        if self.descriptors.ndim != 2 or not len(self.xy) == len(self.scores) == len(self.descriptors):
            raise ShapeError("descriptor set length", len(self.xy), (len(self.scores), self.descriptors.shape))

    def __len__(self):
        return len(self.xy)

    @property
    def dim(self):
        return self.descriptors.shape[1]

    def keypoints(self):
        return [Keypoint(float(x), float(y), float(s)) for (x, y), s in zip(self.xy, self.scores)]


def semantic_mask(s_map, p: SdakParams):
    s_map = np.asarray(s_map, dtype=np.float64)
    if s_map.ndim != 3 or s_map.shape[0] != p.mask_conv.in_channels:
        raise ShapeError("semantic channel axis", p.mask_conv.in_channels,
                         s_map.shape[0] if s_map.ndim == 3 else s_map.shape, "semantic_mask")
    return sigmoid(conv2d(s_map, p.mask_conv))[0].astype(np.float64)


def reweight(k_map, s_mask, r_map, p: SdakParams):
    """``K * (1 + alpha * S_mask + beta * R_map)``, resampling ``R_map`` to the heatmap size."""
    k_map = np.asarray(k_map, dtype=np.float64)
    s_mask = np.asarray(s_mask, dtype=np.float64)
    r_map = np.asarray(r_map, dtype=np.float64)
    if k_map.ndim != 2:
        raise ShapeError("heatmap rank", 2, k_map.ndim, "reweight")
    if s_mask.shape != k_map.shape:
        raise ShapeError("mask shape", k_map.shape, s_mask.shape, "reweight")
    if r_map.shape != k_map.shape:
        r_map = bilinear_resample(r_map, *k_map.shape)
    return k_map * (1.0 + p.alpha * s_mask + p.beta * r_map)


def nms(k, radius):
    """Keep pixels that beat every neighbour within Chebyshev ``radius``; ties go to the row-major earlier pixel."""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2:
        raise ShapeError("heatmap rank", 2, k.ndim, "nms")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    return kernels.nms(k, radius)


def select_candidates(k, p: SdakParams):
    """Suppressed heatmap -> arrays ``(xy, scores)`` in (score desc, y asc, x asc) order, capped at top_k."""
    suppressed = nms(k, p.nms_radius)
    h, w = suppressed.shape
    m = p.border_margin
    inner = np.zeros_like(suppressed, dtype=bool)
    inner[m:h - m, m:w - m] = True
    ys, xs = np.nonzero((suppressed > p.score_threshold) & inner)
    scores = suppressed[ys, xs]
    order = np.lexsort((xs, ys, -scores))[:p.top_k]
    xy = np.stack([xs[order], ys[order]], axis=1).astype(np.float64)
    return xy, scores[order]


def extract_keypoints(k, p: SdakParams):
    xy, scores = select_candidates(k, p)
    return [Keypoint(float(x), float(y), float(s)) for (x, y), s in zip(xy, scores)]


def sample_descriptors(d, kps):
    """Bilinearly sample ``d [C, H, W]`` at each keypoint and L2-normalise.

    ``kps`` is a list of :class:`Keypoint` or an ``(xy, scores)`` pair. A
    zero sample becomes the first basis vector.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 3:
        raise ShapeError("descriptor map rank", 3, d.ndim, "sample_descriptors")
    c, h, w = d.shape
    if isinstance(kps, tuple):
        xy, scores = kps
    else:
        xy = np.array([[kp.x, kp.y] for kp in kps], dtype=np.float64).reshape(-1, 2)
        scores = np.array([kp.score for kp in kps], dtype=np.float64)
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    outside = (xy[:, 0] < 0) | (xy[:, 0] > w - 1) | (xy[:, 1] < 0) | (xy[:, 1] > h - 1)
    if outside.any():
        i = int(np.argmax(outside))
        raise ValueError(f"keypoint {i} at ({xy[i, 0]}, {xy[i, 1]}) outside {w}x{h} map")
    if len(xy) == 0:
        return DescriptorSet(xy, scores, np.zeros((0, c)), (w, h))
    raw = kernels.bilinear_sample(d, xy)
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    desc = np.where(norms > 0, raw / np.where(norms > 0, norms, 1.0), 0.0)
    desc[norms[:, 0] == 0, 0] = 1.0
    return DescriptorSet(xy, scores, desc, (w, h))


def write_features(path, dset: DescriptorSet):
    """One JSON header line, then a GTF ``[count, 3 + C]`` tensor (omitted when count is 0)."""
    width, height = dset.image_size
    header = {"count": len(dset), "descriptorDim": dset.dim, "imageWidth": int(width), "imageHeight": int(height)}
    body = json.dumps(header, sort_keys=True).encode() + b"\n"
    if len(dset):
        rows = np.concatenate([dset.xy, dset.scores[:, None], dset.descriptors], axis=1)
        body += gtf.to_bytes(rows.astype(np.float32))
    Path(path).write_bytes(body)


def read_features(path):
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise gtf.GTFError(f"{path}: missing JSON header line")
    header = json.loads(raw[:nl])
    count, dim = int(header["count"]), int(header["descriptorDim"])
    size = (header["imageWidth"], header["imageHeight"])
    if count == 0:
        if len(raw) != nl + 1:
            raise gtf.TrailingBytesError(f"{path}: payload present for an empty feature set")
        return DescriptorSet(np.zeros((0, 2)), np.zeros(0), np.zeros((0, dim)), size)
    rows = gtf.from_bytes(raw[nl + 1:]).astype(np.float64)
    if rows.shape != (count, 3 + dim):
        raise ShapeError("feature rows", (count, 3 + dim), rows.shape, str(path))
    return DescriptorSet(rows[:, :2], rows[:, 2], rows[:, 3:], size)
