"""Seeded self-checks run by ``gess verify``.

Each check compares an implementation path against an independent oracle (or
a closed-form value) and reports its worst error next to the tolerance.
"""
import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gess import gtf, oracles
from gess.coupled_head import (SaliencyClassifierParams, auxiliary_loss, classify_saliency, coupled_gradient,
                               coupled_loss, decompose, normal_loss, seg_loss)
from gess.depth_stability import StabilityConstants, stability_loss, stability_target
from gess.evalkit import auc, nn_match
from gess.numerics import ConvSpec, conv2d, finite_diff_gradient
from gess.sdak import SdakParams, nms, reweight, select_candidates
from gess.utcf import CueBundle, UtcfParams, gated_fuse, refine_and_output


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    passed: bool

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<28} max_err={self.max_error:.3e} tol={self.tolerance:.1e}"


def random_conv_case(rng):
    c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 5))
    k = int(rng.choice([1, 3]))
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    h, w = int(rng.integers(k, 9)), int(rng.integers(k, 9))
    h += (h + 2 * padding - k) % stride
    w += (w + 2 * padding - k) % stride
    x = rng.normal(size=(c_in, h, w)).astype(np.float32)
    spec = ConvSpec(rng.normal(size=(c_out, c_in, k, k)).astype(np.float32),
                    rng.normal(size=c_out).astype(np.float32), stride, padding)
    return x, spec


def random_coupled_case(rng, h=3, w=3, max_dot=0.99):
    """Random field, params and pseudo-labels with every ``|n . n*| <= max_dot``."""
    while True:
        V = rng.normal(size=(3, h, w))
        V *= rng.uniform(0.5, 2.0, size=(1, h, w)) / np.linalg.norm(V, axis=0, keepdims=True)
        n_star = rng.normal(size=(3, h, w))
        n_star /= np.linalg.norm(n_star, axis=0, keepdims=True)
        n, _ = decompose(V)
        if np.all(np.abs(np.sum(n * n_star, axis=0)) <= max_dot):
            break
    params = SaliencyClassifierParams(rng.normal(size=4), rng.normal(size=4))
    labels = rng.integers(0, 4, size=(h, w))
    return V, params, labels, n_star


def rel_error(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    scale = np.maximum(np.abs(a), np.abs(b))
    return np.where(scale > 0, np.abs(a - b) / np.where(scale > 0, scale, 1.0), 0.0)


def check_conv(rng, fault=False, cases=200):
    worst = 0.0
    for i in range(cases):
        x, spec = random_conv_case(rng)
        expected = oracles.conv2d_loops(x, spec.kernel, spec.bias, spec.stride, spec.padding)
        if fault and i == 0:
            spec.kernel.flat[0] = -spec.kernel.flat[0] - 1.0
        worst = max(worst, float(np.max(np.abs(conv2d(x, spec) - expected))))
    return CheckResult("conv2d vs loop oracle", worst, 1e-5, worst <= 1e-5)


def check_nms(rng, maps=50):
    mismatches = 0
    for _ in range(maps):
        k = rng.uniform(0, 1, (16, 16))
        k[rng.uniform(size=k.shape) < 0.2] = 0.5  # force ties
        if not np.array_equal(nms(k, 2), oracles.nms_brute(k, 2)):
            mismatches += 1
    return CheckResult("nms vs brute force", mismatches, 0, mismatches == 0)


def check_nn(rng, sets=20):
    mismatches = 0
    for _ in range(sets):
        a = rng.normal(size=(20, 20))
        b = rng.normal(size=(20, 20))
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        b /= np.linalg.norm(b, axis=1, keepdims=True)
        got = [(i, j) for i, j, _ in nn_match(a, b, mutual=True)]
        want = [(i, j) for i, j, _ in oracles.nn_match_brute(a, b, mutual=True)]
        mismatches += got != want
    return CheckResult("mutual NN vs brute force", mismatches, 0, mismatches == 0)


def check_auc(rng):
    worst = 0.0
    for t in (2.0, 5.0):
        errors = rng.uniform(0, 8, 100)
        worst = max(worst, abs(auc([errors], t) - oracles.auc_riemann(errors, t)))
    return CheckResult("AUC step vs Riemann", worst, 1e-4, worst <= 1e-4)


def check_orthogonality(rng, pixels=100):
    V, params, labels, n_star = random_coupled_case(rng, 10, 10, max_dot=0.999)
    _, radial, tangential = coupled_gradient(V, params, labels, n_star)
    r = radial.reshape(3, -1).T[:pixels]
    t = tangential.reshape(3, -1).T[:pixels]
    ratio = np.abs(np.sum(r * t, axis=1)) / (np.linalg.norm(r, axis=1) * np.linalg.norm(t, axis=1) + 1e-12)
    worst = float(ratio.max())
    return CheckResult("gradient orthogonality", worst, 1e-6, worst <= 1e-6)


def check_gradient(rng, fields=20):
    worst = 0.0
    for _ in range(fields):
        V, params, labels, n_star = random_coupled_case(rng)
        grad, _, _ = coupled_gradient(V, params, labels, n_star)
        fd = finite_diff_gradient(lambda v: coupled_loss(v, params, labels, n_star)[0], V, 1e-4)
        worst = max(worst, float(rel_error(grad, fd).max()))
    return CheckResult("gradient vs finite diff", worst, 1e-5, worst <= 1e-5)


def check_stability(rng):
    k = StabilityConstants()
    errs = [abs(float(stability_target(0.0, 0.0, k)) - 1.0),
            abs(float(stability_target(0.1, 0.1, k)) - (0.2 + 0.8 * math.exp(-0.9)))]
    vals = stability_target(rng.uniform(0, 1, 1000), rng.uniform(0, 1, 1000), k)
    in_range = bool(np.all(vals > k.epsilon) and np.all(vals <= 1.0))
    worst = max(errs)
    return CheckResult("stability target", worst, 1e-6, worst <= 1e-6 and errs[0] == 0.0 and in_range)


def check_seg_loss(rng):
    labels = rng.integers(0, 4, (5, 5))
    uniform = np.full((4, 5, 5), 0.25)
    perfect = np.zeros((4, 5, 5))
    np.put_along_axis(perfect, labels[None], 1.0, axis=0)
    errs = [abs(seg_loss(uniform, labels) - math.log(4)), abs(seg_loss(perfect, labels))]
    worst = max(errs)
    return CheckResult("segmentation loss", worst, 1e-6, worst <= 1e-6 and errs[1] == 0.0)


def check_utcf_limits(rng):
    c, h, w = 8, 5, 5
    f_t = rng.normal(size=(c, h, w))
    f_n = rng.normal(size=(c, h, w))
    ok = np.array_equal(gated_fuse(f_t, f_n, np.zeros((h, w))), f_t)
    ok &= np.array_equal(gated_fuse(f_t, f_n, np.ones((h, w))), f_n)
    p = UtcfParams.random(c, 4, seed=int(rng.integers(1 << 30)))
    p.out_proj = ConvSpec.zeros(c, c)
    d_init = rng.normal(size=(c, h, w)).astype(np.float32)
    f_s = rng.normal(size=(48, h, w))
    out = refine_and_output(f_t, f_s, d_init, np.ones((h, w)), p)
    ok &= np.array_equal(out, d_init.astype(np.float64))
    return CheckResult("fusion limits (bit-exact)", 0.0 if ok else 1.0, 0, bool(ok))


def check_sdak(rng):
    k_map = rng.uniform(0, 1, (32, 32))
    mask = SdakParams.random_mask_conv(4, seed=1)
    zero = SdakParams(mask, alpha=0.0, beta=0.0, nms_radius=2, border_margin=2)
    ok = np.array_equal(reweight(k_map, rng.uniform(size=(32, 32)), rng.uniform(size=(16, 16)), zero), k_map)
    const_s, const_r = np.full((32, 32), 0.37), np.full((32, 32), 0.81)
    sets = []
    for a, b in ((0.0, 0.0), (1.0, 1.0)):
        p = SdakParams(mask, alpha=a, beta=b, nms_radius=2, border_margin=2)
        xy, _ = select_candidates(reweight(k_map, const_s, const_r, p), p)
        sets.append({tuple(v) for v in xy.tolist()})
    ok &= sets[0] == sets[1]
    return CheckResult("keypoint reweight identity", 0.0 if ok else 1.0, 0, bool(ok))


def check_gtf(rng, tensors=50):
    bad = 0
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "t.gtf"
        for _ in range(tensors):
            shape = tuple(int(v) for v in rng.integers(1, 6, size=int(rng.integers(1, 5))))
            t = rng.normal(size=shape).astype(np.float32)
            gtf.write(t, path)
            back = gtf.read(path)
            bad += not (back.shape == t.shape and back.tobytes() == t.tobytes())
    return CheckResult("GTF round trip", bad, 0, bad == 0)


def check_aux_additivity(rng):
    V, params, labels, n_star = random_coupled_case(rng)
    pred, target = rng.uniform(size=(3, 3)), rng.uniform(0.2, 1.0, size=(3, 3))
    total, _ = auxiliary_loss(V, params, labels, n_star, pred, target)
    n, s = decompose(V)
    separate = normal_loss(n, n_star) + seg_loss(classify_saliency(s, params), labels) + stability_loss(pred, target)
    err = abs(total - separate)
    return CheckResult("auxiliary loss additivity", err, 0, total == separate)


CHECKS = (check_conv, check_nms, check_nn, check_auc, check_orthogonality, check_gradient, check_stability,
          check_seg_loss, check_utcf_limits, check_sdak, check_gtf, check_aux_additivity)


def run_all(seed=0, inject_fault=False):
    results = []
    for i, check in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        if check is check_conv:
            results.append(check(rng, fault=inject_fault))
        else:
            results.append(check(rng))
    return results
