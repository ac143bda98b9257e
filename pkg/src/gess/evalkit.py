"""Homography-supervised matching evaluation (HPatches-style sequences).

Matches are scored by the A->B reprojection error of their keypoints. MMA@t is
the fraction of a pair's matches within t pixels, averaged over pairs; AUC@t
is the normalised area under the empirical CDF of all matched errors pooled
over the run.
"""
import csv
import io
import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gess import kernels
from gess.numerics import ShapeError, filter2d
from gess.sdak import DescriptorSet, read_features

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = tuple(range(1, 11))
IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")
MAX_PAIR_INDEX = 6


class PointAtInfinityError(ValueError):
    pass


class Homography:
    """3x3 planar transform, normalised so that ``h[2, 2] == 1`` when possible."""

    def __init__(self, h):
        h = np.array(h, dtype=np.float64)
        if h.shape != (3, 3):
            raise ShapeError("homography shape", (3, 3), h.shape)
        if not np.isfinite(h).all():
            raise ValueError("homography has non-finite entries")
        if abs(np.linalg.det(h)) <= 1e-12:
            raise ValueError("homography is singular")
        if abs(h[2, 2]) > 1e-12:
            h = h / h[2, 2]
        self.h = h

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx, ty):
        return cls([[1, 0, tx], [0, 1, ty], [0, 0, 1]])

    @classmethod
    def from_file(cls, path):
        values = Path(path).read_text().split()
        if len(values) != 9:
            raise ValueError(f"{path}: expected 9 numbers, found {len(values)}")
        return cls(np.array([float(v) for v in values]).reshape(3, 3))

    def inverse(self):
        return Homography(np.linalg.inv(self.h))

    def __repr__(self):
        return f"Homography({self.h.tolist()})"


def project(H: Homography, pts):
    """Map ``(x, y)`` or an ``[N, 2]`` array through ``H``."""
    pts = np.asarray(pts, dtype=np.float64)
    single = pts.ndim == 1
    p = pts.reshape(-1, 2)
    h = H.h
    w = h[2, 0] * p[:, 0] + h[2, 1] * p[:, 1] + h[2, 2]
    if np.any(np.abs(w) <= 1e-12):
        i = int(np.argmax(np.abs(w) <= 1e-12))
        raise PointAtInfinityError(f"point ({p[i, 0]}, {p[i, 1]}) maps to infinity")
    x = (h[0, 0] * p[:, 0] + h[0, 1] * p[:, 1] + h[0, 2]) / w
    y = (h[1, 0] * p[:, 0] + h[1, 1] * p[:, 1] + h[1, 2]) / w
    out = np.stack([x, y], axis=1)
    return (float(out[0, 0]), float(out[0, 1])) if single else out


@dataclass
class MatchSet:
    idx_a: np.ndarray
    idx_b: np.ndarray
    distance: np.ndarray

    def __len__(self):
        return len(self.idx_a)

    def __iter__(self):
        return iter(zip(self.idx_a.tolist(), self.idx_b.tolist(), self.distance.tolist()))

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))


def _descriptors(x):
    return x.descriptors if isinstance(x, DescriptorSet) else np.asarray(x, dtype=np.float64)


def nn_match(a, b, mutual=True):
    """Nearest-neighbour matching by Euclidean distance; ties go to the lowest index."""
    da, db = _descriptors(a), _descriptors(b)
    if da.ndim != 2 or db.ndim != 2 or da.shape[1] != db.shape[1]:
        raise ShapeError("descriptor dimension", da.shape[-1], db.shape[-1], "nn_match")
    if len(da) == 0 or len(db) == 0:
        return MatchSet.empty()
    ab, d2 = kernels.nearest_neighbors(da, db)
    idx_a = np.arange(len(da))
    if mutual:
        ba, _ = kernels.nearest_neighbors(db, da)
        keep = ba[ab] == idx_a
        idx_a, ab, d2 = idx_a[keep], ab[keep], d2[keep]
    return MatchSet(idx_a.astype(np.int64), ab.astype(np.int64), np.sqrt(d2))


def match_errors(matches: MatchSet, kps_a, kps_b, H: Homography):
    xy_a = kps_a.xy if isinstance(kps_a, DescriptorSet) else np.asarray(kps_a, dtype=np.float64).reshape(-1, 2)
    xy_b = kps_b.xy if isinstance(kps_b, DescriptorSet) else np.asarray(kps_b, dtype=np.float64).reshape(-1, 2)
    if len(matches) == 0:
        return np.zeros(0)
    if matches.idx_a.max() >= len(xy_a) or matches.idx_b.max() >= len(xy_b) or min(matches.idx_a.min(), matches.idx_b.min()) < 0:
        raise IndexError("match index out of range")
    proj = project(H, xy_a[matches.idx_a])
    return np.linalg.norm(proj - xy_b[matches.idx_b], axis=1)


def mma(errors, thresholds=DEFAULT_THRESHOLDS):
    """Fraction of errors ``<= t`` for each threshold; all zeros for an empty list."""
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    if errors.size == 0:
        return np.zeros(len(thresholds))
    return np.array([np.count_nonzero(errors <= t) / errors.size for t in thresholds])


def auc(errors_per_pair, t):
    """Normalised integral of the pooled error CDF over ``[0, t]``, integrated exactly.

    For a step CDF the integral is ``sum(max(0, t - e)) / n``.
    """
    if t <= 0:
        raise ValueError("threshold must be positive")
    pooled = np.concatenate([np.asarray(e, dtype=np.float64).reshape(-1) for e in errors_per_pair] or [np.zeros(0)])
    if pooled.size == 0:
        return 0.0
    return float(np.sum(np.maximum(0.0, t - pooled)) / (pooled.size * t))


# -- dataset layout --------------------------------------------------------------

@dataclass
class SequencePair:
    sequence: str
    index: int  # k in "image 1 <-> image k"
    homography: Homography
    image_a: Path | None = None
    image_b: Path | None = None
    features_a: Path | None = None
    features_b: Path | None = None


def _find_image(folder, stem):
    for suffix in IMAGE_SUFFIXES:
        p = folder / f"{stem}{suffix}"
        if p.is_file():
            return p
    return None


def load_sequences(root, features_dir=None):
    """Scan ``root/<sequence>/`` folders; returns ``(pairs, warnings)``.

    Each folder contributes one pair per ``H_1_k`` file (k = 2..6). A folder with
    no homography files or with an unreadable one is skipped with a warning.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not readable: {root}")
    pairs, warnings = [], []
    for folder in sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")):
        found = []
        try:
            for k in range(2, MAX_PAIR_INDEX + 1):
                hfile = folder / f"H_1_{k}"
                if hfile.exists():
                    found.append((k, Homography.from_file(hfile)))
            if not found:
                raise ValueError("no H_1_k homography files")
        except ValueError as exc:
            msg = f"skipped malformed sequence {folder.name}: {exc}"
            log.warning(msg)
            warnings.append(msg)
            continue
        for k, H in found:
            feats = Path(features_dir) / folder.name if features_dir is not None else None
            pairs.append(SequencePair(
                sequence=folder.name, index=k, homography=H,
                image_a=_find_image(folder, "1"), image_b=_find_image(folder, str(k)),
                features_a=feats / "1.feat" if feats else None,
                features_b=feats / f"{k}.feat" if feats else None))
    return pairs, warnings


# -- images and a toy detector/descriptor ---------------------------------------

def load_image(path):
    """Decode an 8-bit grayscale or RGB PNG/PPM/PGM into float luma ``[H, W]``."""
    from PIL import Image

    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.float64)
        if im.mode == "RGB":
            rgb = np.asarray(im, dtype=np.float64)
            return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
        raise ValueError(f"{path}: unsupported image mode {im.mode!r} (need 8-bit L or RGB)")


def save_image(path, gray):
    from PIL import Image

    Image.fromarray(np.clip(np.rint(gray), 0, 255).astype(np.uint8), mode="L").save(path)


def toy_heatmap(img, k=0.04):
    """Harris corner response, clipped at zero and scaled to max 1 (edge-replicated borders)."""
    from gess.depth_stability import SOBEL_X, SOBEL_Y, gaussian_kernel

    pad = 6
    im = np.pad(np.asarray(img, dtype=np.float64), pad, mode="edge")
    ix = filter2d(im, SOBEL_X)
    iy = filter2d(im, SOBEL_Y)
    g = gaussian_kernel()
    sxx, syy, sxy = filter2d(ix * ix, g), filter2d(iy * iy, g), filter2d(ix * iy, g)
    r = sxx * syy - sxy * sxy - k * (sxx + syy) ** 2
    r = np.maximum(r[pad:-pad, pad:-pad], 0.0)
    peak = r.max()
    return r / peak if peak > 0 else r


def toy_descriptor_map(img, patch=7):
    """Mean-subtracted intensity patch around every pixel, ``[patch*patch, H, W]``."""
    im = np.asarray(img, dtype=np.float64)
    h, w = im.shape
    r = patch // 2
    padded = np.pad(im, r, mode="edge")
    out = np.empty((patch * patch, h, w))
    i = 0
    for dy in range(patch):
        for dx in range(patch):
            out[i] = padded[dy:dy + h, dx:dx + w]
            i += 1
    return out - out.mean(axis=0, keepdims=True)


def toy_features(img, params):
    """Detect and describe an image with the toy Harris/patch pipeline."""
    from gess.sdak import sample_descriptors, select_candidates

    img = np.asarray(img, dtype=np.float64)
    kps = select_candidates(toy_heatmap(img), params)
    dset = sample_descriptors(toy_descriptor_map(img), kps)
    dset.image_size = (img.shape[1], img.shape[0])
    return dset


# -- evaluation and reports ------------------------------------------------------

@dataclass
class PairResult:
    sequence: str
    pair_index: int
    matches: int
    errors: np.ndarray
    mma: np.ndarray


@dataclass
class EvalReport:
    pairs: list
    thresholds: tuple = DEFAULT_THRESHOLDS
    metadata: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def mean_mma(self):
        if not self.pairs:
            return np.zeros(len(self.thresholds))
        return np.mean([p.mma for p in self.pairs], axis=0)

    def auc_at(self, t):
        return auc([p.errors for p in self.pairs], t)

    def mma_at(self, t):
        """Mean MMA over pairs at threshold ``t`` (computed directly when not a reported threshold)."""
        if t in self.thresholds:
            return float(self.mean_mma()[list(self.thresholds).index(t)])
        if not self.pairs:
            return 0.0
        return float(np.mean([mma(p.errors, [t])[0] for p in self.pairs]))

    def split_mma(self, prefix=None):
        chosen = [p for p in self.pairs if prefix is None or p.sequence.startswith(prefix)]
        if not chosen:
            return np.zeros(len(self.thresholds))
        return np.mean([p.mma for p in chosen], axis=0)


def evaluate_pair(pair: SequencePair, a: DescriptorSet, b: DescriptorSet, mutual=True, thresholds=DEFAULT_THRESHOLDS):
    matches = nn_match(a, b, mutual=mutual)
    errors = match_errors(matches, a, b, pair.homography)
    return PairResult(pair.sequence, pair.index, len(matches), errors, mma(errors, thresholds))


def evaluate(pairs, mutual=True, thresholds=DEFAULT_THRESHOLDS, jobs=1, metadata=None, warnings=()):
    """Evaluate every pair whose feature files exist; missing ones are skipped with a warning."""
    warnings = list(warnings)

    def run(pair):
        missing = [str(p) for p in (pair.features_a, pair.features_b) if p is None or not Path(p).is_file()]
        if missing:
            return None, f"skipped pair {pair.sequence}/1-{pair.index}: missing features {', '.join(missing)}"
        try:
            a, b = read_features(pair.features_a), read_features(pair.features_b)
            return evaluate_pair(pair, a, b, mutual, thresholds), None
        except (ValueError, OSError) as exc:
            return None, f"skipped pair {pair.sequence}/1-{pair.index}: {exc}"

    ordered = sorted(pairs, key=lambda p: (p.sequence, p.index))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, ordered))
    else:
        outcomes = [run(p) for p in ordered]
    results = []
    for res, warn in outcomes:
        if warn:
            log.warning(warn)
            warnings.append(warn)
        else:
            results.append(res)
    return EvalReport(results, tuple(thresholds), dict(metadata or {}), warnings)


def _fmt(x):
    return f"{x:.6f}"


def _to_json(obj):
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ", ".join(json.dumps(k) + ": " + _to_json(v) for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_to_json(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise ValueError("report contains a non-finite number")
        return _fmt(float(obj))
    return json.dumps(str(obj))


def report_dict(report: EvalReport):
    pairs = []
    for p in report.pairs:
        e = p.errors
        pairs.append({
            "sequence": p.sequence,
            "pairIndex": p.pair_index,
            "matches": p.matches,
            "errorMean": float(e.mean()) if e.size else 0.0,
            "errorMedian": float(np.median(e)) if e.size else 0.0,
            "errorMax": float(e.max()) if e.size else 0.0,
            "mma": [float(v) for v in p.mma],
        })
    return {
        "pairs": pairs,
        "aggregate": {
            "pairs": len(report.pairs),
            "matches": int(sum(p.matches for p in report.pairs)),
            "meanMMA": [float(v) for v in report.mean_mma()],
            "mma3": report.mma_at(3),
            "auc2": report.auc_at(2),
            "auc5": report.auc_at(5),
        },
        "thresholds": list(report.thresholds),
        "metadata": report.metadata,
        "warnings": list(report.warnings),
    }


def emit_report(report: EvalReport, fmt="json"):
    """Serialise deterministically: sorted keys, every real printed with 6 decimals."""
    d = report_dict(report)
    if fmt == "json":
        return (_to_json(d) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["sequence", "pairIndex", "matches"] + [f"mma{t}" for t in report.thresholds])
        for p in d["pairs"]:
            writer.writerow([p["sequence"], p["pairIndex"], p["matches"]] + [_fmt(v) for v in p["mma"]])
        agg = d["aggregate"]
        writer.writerow(["aggregate", "", agg["matches"]] + [_fmt(v) for v in agg["meanMMA"]])
        return buf.getvalue().encode()
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report(data, fmt="json"):
    """Parse emitted bytes back into plain Python structures."""
    text = data.decode() if isinstance(data, bytes) else data
    if fmt == "json":
        return json.loads(text)
    if fmt == "csv":
        rows = list(csv.DictReader(io.StringIO(text)))
        out = []
        for row in rows:
            mcols = sorted((k for k in row if re.fullmatch(r"mma\d+", k)), key=lambda k: int(k[3:]))
            out.append({
                "sequence": row["sequence"],
                "pairIndex": int(row["pairIndex"]) if row["pairIndex"] else None,
                "matches": int(row["matches"]),
                "mma": [float(row[k]) for k in mcols],
            })
        return out
    raise ValueError(f"unknown report format {fmt!r}")


def emit_plot_data(report: EvalReport):
    """CSV of mean MMA per threshold for the illumination (``i_``), viewpoint (``v_``) and full splits."""
    illum, view, every = report.split_mma("i_"), report.split_mma("v_"), report.split_mma()
    lines = ["threshold,illumination,viewpoint,all"]
    for i, t in enumerate(report.thresholds):
        lines.append(f"{t},{_fmt(illum[i])},{_fmt(view[i])},{_fmt(every[i])}")
    return ("\n".join(lines) + "\n").encode()
