import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gess import gtf, oracles
from gess.numerics import ConvSpec, ShapeError
from gess.sdak import (DescriptorSet, Keypoint, SdakParams, extract_keypoints, nms, read_features, reweight,
                       sample_descriptors, select_candidates, semantic_mask, write_features)


def params(**kw):
    kw.setdefault("mask_conv", ConvSpec.zeros(1, 3, 3))
    return SdakParams(**kw)


def test_mask_zero_and_saturated():
    s = np.random.default_rng(0).uniform(size=(3, 6, 6))
    assert np.all(semantic_mask(s, params()) == 0.5)
    hot = params(mask_conv=ConvSpec(np.zeros((1, 3, 3, 3)), np.array([20.0])))
    assert np.allclose(semantic_mask(s, hot), 1.0, atol=1e-8)


def test_mask_matches_oracle():
    rng = np.random.default_rng(1)
    conv = SdakParams.random_mask_conv(3, seed=2)
    s = rng.uniform(size=(3, 6, 6))
    pre = oracles.conv2d_loops(s, conv.kernel.astype(np.float64), conv.bias.astype(np.float64), 1, 1)[0]
    want = np.vectorize(oracles.sigmoid_scalar)(pre)
    assert np.max(np.abs(semantic_mask(s, params(mask_conv=conv)) - want)) <= 1e-6


def test_mask_channel_mismatch():
    with pytest.raises(ShapeError):
        semantic_mask(np.zeros((4, 5, 5)), params())


def test_reweight_examples():
    rng = np.random.default_rng(3)
    k = rng.uniform(size=(8, 8)).astype(np.float32)
    out = reweight(k, rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8)), params(alpha=0.0, beta=0.0))
    assert np.array_equal(out, k)
    ones = np.ones((8, 8))
    assert np.allclose(reweight(k, ones, ones, params()), 3 * k.astype(np.float64))
    s, r = rng.uniform(size=(2, 8, 8))
    got = reweight(k, s, r, params(alpha=0.5, beta=0.25))
    want = np.array([[float(k[i, j]) * (1 + 0.5 * s[i, j] + 0.25 * r[i, j]) for j in range(8)] for i in range(8)])
    assert np.max(np.abs(got - want)) <= 1e-7


def test_reweight_resamples_reliability():
    k = np.ones((7, 7))
    r = np.array([[0.0, 1.0]])
    out = reweight(k, np.zeros((7, 7)), r, params(alpha=0.0))
    assert np.allclose(out[:, 0], 1.0) and np.allclose(out[:, -1], 2.0) and np.allclose(out[:, 3], 1.5)


@settings(max_examples=40)
@given(st.floats(0, 3), st.floats(0, 3), st.integers(0, 2**31))
def test_reweight_monotone_in_alpha(a, da, seed):
    rng = np.random.default_rng(seed)
    k, s, r = rng.uniform(size=(3, 6, 6))
    assert np.all(reweight(k, s, r, params(alpha=a + da)) >= reweight(k, s, r, params(alpha=a)))


def test_nms_examples():
    k = np.zeros((7, 7))
    k[3, 3] = 0.8
    assert np.array_equal(nms(k, 2), k)
    k = np.zeros((5, 5))
    k[2, 1] = k[2, 2] = 0.5
    out = nms(k, 1)
    assert out[2, 1] == 0.5 and out[2, 2] == 0


def test_nms_matches_brute():
    rng = np.random.default_rng(4)
    for _ in range(10):
        k = rng.uniform(size=(16, 16))
        assert np.array_equal(nms(k, 2), oracles.nms_brute(k, 2))


@settings(max_examples=50)
@given(hnp.arrays(np.float64, (10, 10), elements=st.sampled_from([0.0, 0.25, 0.5, 1.0])), st.integers(1, 3))
def test_nms_support_and_values(k, r):
    out = nms(k, r)
    assert np.all((out == 0) | (out == k))
    assert np.array_equal(out, oracles.nms_brute(k, r))


def test_nms_rejects_bad_input():
    with pytest.raises(ValueError):
        nms(np.zeros((4, 4)), 0)
    with pytest.raises(ShapeError):
        nms(np.zeros((2, 4, 4)), 1)


def test_extract_empty_and_ordered():
    assert extract_keypoints(np.zeros((12, 12)), params(nms_radius=2, border_margin=0)) == []
    k = np.zeros((20, 20))
    k[5, 5], k[10, 14], k[15, 8] = 0.9, 0.5, 0.1
    kps = extract_keypoints(k, params(top_k=2, nms_radius=2, border_margin=2))
    assert kps == [Keypoint(5, 5, 0.9), Keypoint(14, 10, 0.5)]


def test_extract_matches_brute():
    rng = np.random.default_rng(5)
    for _ in range(10):
        k = rng.uniform(size=(24, 24))
        p = params(nms_radius=2, top_k=15, score_threshold=0.3, border_margin=3)
        got = [(kp.x, kp.y, kp.score) for kp in extract_keypoints(k, p)]
        assert got == oracles.extract_brute(k, 2, 0.3, 3, 15)


def test_extract_deterministic_tie_order():
    k = np.zeros((12, 12))
    k[3, 8] = k[3, 3] = k[8, 3] = 1.0
    kps = extract_keypoints(k, params(nms_radius=1, border_margin=0))
    assert [(kp.x, kp.y) for kp in kps] == [(3, 3), (8, 3), (3, 8)]


def test_sample_examples():
    rng = np.random.default_rng(6)
    d = rng.normal(size=(5, 4, 6))
    ds = sample_descriptors(d, [Keypoint(2, 1, 1.0)])
    assert np.allclose(ds.descriptors[0], d[:, 1, 2] / np.linalg.norm(d[:, 1, 2]))
    v = np.array([1.0, -2.0, 2.0])
    const = np.broadcast_to(v[:, None, None], (3, 4, 4))
    ds = sample_descriptors(const, [Keypoint(1.5, 2.25), Keypoint(0, 0)])
    assert np.allclose(ds.descriptors, v / 3.0)
    two = np.array([[[1.0, 3.0]], [[0.0, 4.0]]])
    ds = sample_descriptors(two, [Keypoint(0.5, 0)])
    mid = np.array([2.0, 2.0])
    assert np.allclose(ds.descriptors[0], mid / np.linalg.norm(mid))


def test_sample_unit_norm_and_zero_vector():
    rng = np.random.default_rng(7)
    d = rng.normal(size=(8, 10, 10))
    d[:, 4, 4] = 0
    xy = np.column_stack([rng.uniform(0, 9, 30), rng.uniform(0, 9, 30)])
    ds = sample_descriptors(d, (np.vstack([xy, [[4, 4]]]), np.ones(31)))
    assert np.allclose(np.linalg.norm(ds.descriptors, axis=1), 1.0, atol=1e-5)
    assert np.array_equal(ds.descriptors[-1], np.eye(8)[0])


def test_sample_out_of_bounds():
    with pytest.raises(ValueError, match="outside"):
        sample_descriptors(np.ones((2, 4, 4)), [Keypoint(3.5, 0)])


def test_feature_file_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    d = rng.normal(size=(6, 10, 12))
    ds = sample_descriptors(d, select_candidates(rng.uniform(size=(10, 12)), params(nms_radius=1, border_margin=1)))
    path = tmp_path / "x.feat"
    write_features(path, ds)
    header = path.read_bytes().split(b"\n", 1)[0]
    assert header == (b'{"count": %d, "descriptorDim": 6, "imageHeight": 10, "imageWidth": 12}' % len(ds))
    back = read_features(path)
    assert back.image_size == (12, 10)
    assert np.array_equal(back.xy, ds.xy)
    assert np.allclose(back.descriptors, ds.descriptors, atol=1e-7)


def test_feature_file_empty(tmp_path):
    path = tmp_path / "e.feat"
    write_features(path, DescriptorSet(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 4)), (5, 5)))
    back = read_features(path)
    assert len(back) == 0 and back.dim == 4
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(gtf.TrailingBytesError):
        read_features(path)


def test_params_validation():
    with pytest.raises(ValueError):
        params(alpha=-1)
    with pytest.raises(ShapeError):
        SdakParams(ConvSpec.zeros(2, 3, 3))
