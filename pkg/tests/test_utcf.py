import math

import numpy as np
import pytest

from gess import oracles
from gess.numerics import BatchNorm, ConvSpec, ShapeError
from gess.utcf import (ChannelMLP, CueBundle, GateNet, UtcfParams, channel_calibrate, gated_fuse, gating_weight,
                       project_cues, refine_and_output, utcf_forward)


def loops(x, spec, padding=None):
    pad = spec.kernel.shape[-1] // 2 if padding is None else padding
    return oracles.conv2d_loops(np.asarray(x, np.float64), np.asarray(spec.kernel, np.float64),
                                np.asarray(spec.bias, np.float64), 1, pad)


def bn_oracle(x, bn):
    out = np.empty_like(x)
    for c in range(x.shape[0]):
        out[c] = bn.gamma[c] * (x[c] - bn.mean[c]) / math.sqrt(float(bn.var[c]) + 1e-5) + bn.beta[c]
    return out


def calibrate_oracle(f, mlp):
    gap = np.array([f[c].sum() / f[c].size for c in range(f.shape[0])])
    hidden = np.maximum(np.asarray(mlp.w1, np.float64) @ gap + mlp.b1, 0)
    w = np.array([oracles.sigmoid_scalar(v) for v in np.asarray(mlp.w2, np.float64) @ hidden + mlp.b2])
    return f * w[:, None, None], w


def gate_oracle(f_t, f_n, f_s, gate):
    hidden = np.maximum(loops(np.concatenate([f_t, f_n, f_s]), gate.first), 0)
    logit = loops(hidden, gate.second)[0]
    return np.vectorize(oracles.sigmoid_scalar)(logit)


def forward_oracle(bundle, p):
    f_t = bundle.texture
    f_n = np.maximum(bn_oracle(loops(bundle.normal_raw, p.normal_proj), p.normal_bn), 0)
    f_s = loops(np.maximum(loops(bundle.semantic_raw, p.sem_conv1), 0), p.sem_conv2)
    ft, _ = calibrate_oracle(f_t, p.mlp_t)
    fn, _ = calibrate_oracle(f_n, p.mlp_n)
    fs, _ = calibrate_oracle(f_s, p.mlp_s)
    g = gate_oracle(ft, fn, fs, p.gate)
    fused = (1 - g) * ft + g * fn
    refine = np.maximum(loops(fused + p.mu * loops(fs, p.sem_increment), p.out_proj), 0)
    return bundle.attention * (refine + bundle.texture)


def random_bundle(rng, c=16, h=8, w=8, cs=5):
    return CueBundle(rng.normal(size=(c, h, w)), rng.normal(size=(3, h, w)), rng.uniform(size=(cs, h, w)),
                     rng.uniform(size=(h, w)))


def random_mlp(rng, c, hidden):
    return ChannelMLP(rng.normal(size=(hidden, c)), rng.normal(size=hidden), rng.normal(size=(c, hidden)),
                      rng.normal(size=c))


def test_projection_identity_embeds_normals():
    c = 8
    p = UtcfParams.zeros(c, 4)
    k = np.zeros((c, 3, 1, 1), np.float32)
    k[0, 0] = k[1, 1] = k[2, 2] = 1
    p.normal_proj = ConvSpec(k, np.zeros(c, np.float32))
    bundle = random_bundle(np.random.default_rng(0), c=c, cs=4)
    _, f_n, f_s = project_cues(bundle, p)
    assert np.allclose(f_n[:3], np.maximum(bundle.normal_raw, 0), atol=1e-5)
    assert np.all(f_n[3:] == 0)
    assert f_s.shape == (48, 8, 8)


def test_projection_zero_weights_constant():
    c = 6
    p = UtcfParams.zeros(c, 4)
    p.normal_proj = ConvSpec(np.zeros((c, 3, 1, 1)), np.linspace(-1, 1, c))
    _, f_n, _ = project_cues(random_bundle(np.random.default_rng(1), c=c, cs=4), p)
    want = np.maximum(bn_oracle(np.linspace(-1, 1, c)[:, None, None] * np.ones((1, 8, 8)), p.normal_bn), 0)
    assert np.allclose(f_n, want) and np.all(f_n == f_n[:, :1, :1])


def test_projection_matches_composition():
    rng = np.random.default_rng(2)
    p = UtcfParams.random(16, 5, seed=3, semantic_hidden=12)
    bundle = random_bundle(rng)
    f_t, f_n, f_s = project_cues(bundle, p)
    assert f_t is bundle.texture
    assert np.max(np.abs(f_n - np.maximum(bn_oracle(loops(bundle.normal_raw, p.normal_proj), p.normal_bn), 0))) <= 1e-5
    want_s = loops(np.maximum(loops(bundle.semantic_raw, p.sem_conv1), 0), p.sem_conv2)
    assert np.max(np.abs(f_s - want_s)) <= 1e-5


def test_projection_channel_mismatch():
    p = UtcfParams.random(16, 5, seed=0)
    with pytest.raises(ShapeError):
        project_cues(random_bundle(np.random.default_rng(0), cs=4), p)


def test_calibrate_zero_and_saturated():
    f = np.random.default_rng(4).normal(size=(4, 3, 3))
    zero = ChannelMLP(np.zeros((1, 4)), np.zeros(1), np.zeros((4, 1)), np.zeros(4))
    out, w = channel_calibrate(f, zero)
    assert np.all(w == 0.5) and np.array_equal(out, 0.5 * f)
    hot = ChannelMLP(np.zeros((1, 4)), np.zeros(1), np.zeros((4, 1)), np.full(4, 20.0))
    out, w = channel_calibrate(f, hot)
    assert np.max(np.abs(out - f)) <= 1e-6


def test_calibrate_matches_oracle():
    rng = np.random.default_rng(5)
    f = rng.normal(size=(4, 3, 3))
    mlp = random_mlp(rng, 4, 1)
    out, w = channel_calibrate(f, mlp)
    want_out, want_w = calibrate_oracle(f, mlp)
    assert np.max(np.abs(w - want_w)) <= 1e-6 and np.max(np.abs(out - want_out)) <= 1e-6


def test_calibrate_never_grows():
    rng = np.random.default_rng(6)
    f = rng.normal(size=(8, 4, 4))
    out, _ = channel_calibrate(f, random_mlp(rng, 8, 2))
    assert np.abs(out).max() <= np.abs(f).max()


def test_calibrate_dim_mismatch():
    with pytest.raises(ShapeError):
        channel_calibrate(np.zeros((5, 2, 2)), random_mlp(np.random.default_rng(0), 4, 1))


def test_gate_zero_and_saturated():
    c = 4
    f_t, f_n, f_s = np.ones((c, 3, 3)), np.ones((c, 3, 3)), np.ones((48, 3, 3))
    zero = GateNet(ConvSpec.zeros(128, 2 * c + 48), ConvSpec.zeros(1, 128))
    assert np.all(gating_weight(f_t, f_n, f_s, zero) == 0.5)
    hot = GateNet(ConvSpec.zeros(128, 2 * c + 48), ConvSpec(np.zeros((1, 128, 1, 1)), np.array([20.0])))
    assert np.allclose(gating_weight(f_t, f_n, f_s, hot), 1.0, atol=1e-8)


def test_gate_matches_oracle():
    rng = np.random.default_rng(7)
    p = UtcfParams.random(4, 3, seed=8)
    f_t, f_n, f_s = rng.normal(size=(4, 5, 5)), rng.normal(size=(4, 5, 5)), rng.normal(size=(48, 5, 5))
    g = gating_weight(f_t, f_n, f_s, p.gate)
    assert np.max(np.abs(g - gate_oracle(f_t, f_n, f_s, p.gate))) <= 1e-6
    assert np.all((g > 0) & (g < 1))


def test_gate_channel_mismatch():
    p = UtcfParams.random(4, 3, seed=8)
    with pytest.raises(ShapeError):
        gating_weight(np.zeros((5, 2, 2)), np.zeros((4, 2, 2)), np.zeros((48, 2, 2)), p.gate)


def test_fuse_limits():
    rng = np.random.default_rng(9)
    f_t, f_n = rng.normal(size=(2, 6, 4, 4))
    assert np.array_equal(gated_fuse(f_t, f_n, np.zeros((4, 4))), f_t)
    assert np.array_equal(gated_fuse(f_t, f_n, np.ones((4, 4))), f_n)
    assert np.array_equal(gated_fuse(f_t, -f_t, np.full((4, 4), 0.5)), np.zeros((6, 4, 4)))
    with pytest.raises(ShapeError):
        gated_fuse(f_t, f_n, np.zeros((3, 3)))


def test_fuse_is_convex():
    rng = np.random.default_rng(10)
    for _ in range(20):
        f_t, f_n = rng.normal(size=(2, 3, 5, 5))
        out = gated_fuse(f_t, f_n, rng.uniform(size=(5, 5)))
        assert np.all(out >= np.minimum(f_t, f_n) - 1e-12) and np.all(out <= np.maximum(f_t, f_n) + 1e-12)


def test_refine_residual_and_suppression():
    rng = np.random.default_rng(11)
    c = 8
    p = UtcfParams.random(c, 4, seed=1)
    p.out_proj = ConvSpec.zeros(c, c)
    d0 = rng.normal(size=(c, 5, 5))
    f_fused, f_s = rng.normal(size=(c, 5, 5)), rng.normal(size=(48, 5, 5))
    assert np.array_equal(refine_and_output(f_fused, f_s, d0, np.ones((5, 5)), p), d0)
    p2 = UtcfParams.random(c, 4, seed=1)
    assert np.array_equal(refine_and_output(f_fused, f_s, d0, np.zeros((5, 5)), p2), np.zeros_like(d0))


def test_forward_zero_params_closed_form():
    # zero weights: projections vanish, calibration halves, gate is 0.5, output projection is zero
    bundle = random_bundle(np.random.default_rng(12), cs=4)
    out = utcf_forward(bundle, UtcfParams.zeros(16, 4))
    assert np.allclose(out, bundle.texture * bundle.attention, atol=1e-15)
    _, mid = utcf_forward(bundle, UtcfParams.zeros(16, 4), intermediates=True)
    assert np.all(mid["g"] == 0.5) and np.array_equal(mid["fused"], 0.25 * bundle.texture)


def test_forward_matches_chained_oracle():
    rng = np.random.default_rng(13)
    p = UtcfParams.random(16, 5, seed=14)
    bundle = random_bundle(rng)
    out = utcf_forward(bundle, p)
    assert out.shape == (16, 8, 8)
    assert np.max(np.abs(out - forward_oracle(bundle, p))) <= 1e-5
    assert np.array_equal(out, utcf_forward(bundle, p))


def test_forward_cue_independence():
    rng = np.random.default_rng(15)
    p = UtcfParams.random(8, 3, seed=16)
    bundle = random_bundle(rng, c=8, cs=3)
    _, before = utcf_forward(bundle, p, intermediates=True)
    p.mlp_n = random_mlp(rng, 8, 2)
    _, after = utcf_forward(bundle, p, intermediates=True)
    assert np.array_equal(before["W_t"], after["W_t"]) and np.array_equal(before["W_s"], after["W_s"])
    assert not np.array_equal(before["W_n"], after["W_n"])
    assert all(np.all(np.isfinite(v)) for v in after.values())


def test_params_save_load(tmp_path):
    p = UtcfParams.random(8, 3, seed=17, mu=0.3)
    p.save(tmp_path)
    q = UtcfParams.load(tmp_path)
    bundle = random_bundle(np.random.default_rng(18), c=8, cs=3)
    assert q.mu == pytest.approx(0.3)
    assert np.array_equal(utcf_forward(bundle, p), utcf_forward(bundle, q))


def test_params_consistency_checks():
    p = UtcfParams.random(8, 3, seed=0)
    with pytest.raises(ShapeError):
        UtcfParams(p.normal_proj, BatchNorm.identity(7), p.sem_conv1, p.sem_conv2, p.mlp_t, p.mlp_n, p.mlp_s,
                   p.gate, p.sem_increment, p.out_proj)


def test_bundle_validation():
    with pytest.raises(ShapeError):
        CueBundle(np.zeros((4, 3, 3)), np.zeros((3, 3, 2)), np.zeros((2, 3, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        CueBundle(np.zeros((4, 3, 3)), np.zeros((3, 3, 3)), np.zeros((2, 3, 3)), np.full((3, 3), 2.0))
