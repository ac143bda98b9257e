"""File-level extraction: cue maps (or plain images) in, feature files out.

Cue files are named ``<stem>.<role>.gtf``. Required roles are ``desc``,
``normal``, ``sem``, ``attn`` and ``heat``, plus either ``rel`` (a reliability
map) or ``depth`` (converted to one). A stem with an image but no cue files is
run through the toy Harris/patch pipeline instead.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gess import gtf
from gess.config import RunConfig
from gess.depth_stability import depth_to_reliability
from gess.evalkit import IMAGE_SUFFIXES, load_image, toy_features
from gess.numerics import ConvSpec
from gess.sdak import SdakParams, reweight, sample_descriptors, select_candidates, semantic_mask, write_features
from gess.utcf import CueBundle, UtcfParams, utcf_forward

log = logging.getLogger(__name__)

ROLES = ("desc", "normal", "sem", "depth", "rel", "attn", "heat")
REQUIRED_ROLES = ("desc", "normal", "sem", "attn", "heat")
FEATURE_SUFFIX = ".feat"


class MissingCueError(ValueError):
    def __init__(self, stem, role):
        self.stem = stem
        self.role = role
        super().__init__(f"{stem}: missing {role} cue map ({stem}.{role}.gtf)")


@dataclass
class WorkItem:
    key: Path  # relative path of the stem, e.g. "seq/1"
    cues: dict  # role -> file
    image: Path | None = None


def discover(root):
    """Group files under ``root`` by stem; returns work items sorted by relative stem path."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {root}")
    items = {}
    for p in root.rglob("*"):
        if not p.is_file():
            continue
        rel = p.relative_to(root)
        parts = p.name.split(".")
        if len(parts) == 3 and parts[2] == "gtf" and parts[1] in ROLES:
            key = rel.parent / parts[0]
            items.setdefault(key, WorkItem(key, {})).cues[parts[1]] = p
        elif p.suffix.lower() in IMAGE_SUFFIXES:
            key = rel.parent / p.stem
            items.setdefault(key, WorkItem(key, {})).image = p
    return [items[k] for k in sorted(items, key=lambda k: k.as_posix())]


def build_params(cfg: RunConfig, semantic_channels, channels=None):
    """UTCF weights and SDAK settings, from ``paths.params`` or seeded random init.

    Random init uses ``channels`` (the descriptor depth of the cue maps) when given,
    else ``utcf.channels``.
    """
    s = cfg.sdak
    if cfg.paths.params:
        tensors, scalars = gtf.read_bundle(cfg.paths.params)
        utcf_params = UtcfParams.from_tensors(tensors, scalars.get("mu", cfg.utcf.mu))
        mask = ConvSpec(tensors["sdak_mask.kernel"], tensors["sdak_mask.bias"])
    else:
        utcf_params = UtcfParams.random(channels or cfg.utcf.channels, semantic_channels, cfg.utcf.reduction,
                                        seed=cfg.run.seed, mu=cfg.utcf.mu)
        mask = SdakParams.random_mask_conv(semantic_channels, seed=cfg.run.seed + 1)
    sdak_params = SdakParams(mask, s.alpha, s.beta, s.nms_radius, s.top_k, s.score_threshold, s.border_margin)
    return utcf_params, sdak_params


def sdak_params_only(cfg: RunConfig):
    s = cfg.sdak
    return SdakParams(ConvSpec.zeros(1, 1, 3), s.alpha, s.beta, s.nms_radius, s.top_k, s.score_threshold,
                      s.border_margin)


def extract_cues(cues, cfg: RunConfig, params=None, stem="?"):
    """Run fusion and keypoint selection on loaded cue maps (``role -> array``)."""
    for role in REQUIRED_ROLES:
        if role not in cues:
            raise MissingCueError(stem, role)
    if "rel" not in cues and "depth" not in cues:
        raise MissingCueError(stem, "depth/rel")
    utcf_params, sdak_params = params or build_params(cfg, cues["sem"].shape[0], cues["desc"].shape[0])
    bundle = CueBundle(cues["desc"], cues["normal"], cues["sem"], cues["attn"])
    descriptors = utcf_forward(bundle, utcf_params)
    reliability = cues["rel"] if "rel" in cues else depth_to_reliability(cues["depth"], cfg.stability.constants())
    heat = reweight(cues["heat"], semantic_mask(cues["sem"], sdak_params), reliability, sdak_params)
    kps = select_candidates(heat, sdak_params)
    dset = sample_descriptors(descriptors, kps)
    dset.image_size = (descriptors.shape[2], descriptors.shape[1])
    return dset


def process_item(item: WorkItem, cfg: RunConfig, out_dir, params=None):
    out = Path(out_dir) / item.key.parent / f"{item.key.name}{FEATURE_SUFFIX}"
    if item.cues:
        cues = {role: gtf.read(path) for role, path in item.cues.items()}
        dset = extract_cues(cues, cfg, params, stem=item.key.as_posix())
    else:
        dset = toy_features(load_image(item.image), sdak_params_only(cfg))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_features(out, dset)
    return out, len(dset)


def extract_dir(root, cfg: RunConfig, out_dir, jobs=1):
    """Extract every stem under ``root``; returns ``[(output path, keypoint count)]`` in stem order."""
    items = discover(root)
    for item in items:
        if item.cues:
            for role in REQUIRED_ROLES:
                if role not in item.cues:
                    raise MissingCueError(item.key.as_posix(), role)
            if "rel" not in item.cues and "depth" not in item.cues:
                raise MissingCueError(item.key.as_posix(), "depth/rel")
    # load shared weights once so every image uses the same network
    params = None
    cue_items = [i for i in items if i.cues]
    if cue_items:
        first = cue_items[0].cues
        params = build_params(cfg, gtf.read(first["sem"]).shape[0], gtf.read(first["desc"]).shape[0])
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda it: process_item(it, cfg, out_dir, params), items))
    return [process_item(it, cfg, out_dir, params) for it in items]


def random_cue_set(h, w, channels, semantic_channels=8, seed=0, depth=True):
    """Seeded synthetic cue maps, handy for fixtures and smoke runs."""
    rng = np.random.default_rng(seed)
    normal = rng.normal(size=(3, h, w))
    normal /= np.linalg.norm(normal, axis=0, keepdims=True)
    cues = {
        "desc": rng.normal(size=(channels, h, w)).astype(np.float32),
        "normal": normal.astype(np.float32),
        "sem": rng.uniform(0, 1, (semantic_channels, h, w)).astype(np.float32),
        "attn": rng.uniform(0.5, 1.0, (h, w)).astype(np.float32),
        "heat": rng.uniform(0, 1, (h, w)).astype(np.float32),
    }
    if depth:
        cues["depth"] = rng.uniform(1.0, 5.0, (h, w)).astype(np.float32)
    else:
        cues["rel"] = rng.uniform(0.2, 1.0, (h, w)).astype(np.float32)
    return cues
