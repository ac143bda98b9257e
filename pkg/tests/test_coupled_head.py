import math

import numpy as np
import pytest

from gess import oracles
from gess.coupled_head import (SaliencyClassifierParams, SemanticWeightTable, auxiliary_loss, classify_saliency,
                               coupled_gradient, coupled_loss, decompose, fuse_labels, normal_loss, seg_loss)
from gess.depth_stability import stability_loss
from gess.numerics import ShapeError, finite_diff_gradient
from gess.verify import random_coupled_case, rel_error


def field(*vectors):
    """Pixels laid out along one row: ``[3, 1, len(vectors)]``."""
    return np.array(vectors, dtype=np.float64).T[:, None, :]


def test_decompose_examples():
    n, s = decompose(field((0, 0, 2), (3, 4, 0), (0, 0, 0)))
    assert np.allclose(n[:, 0, 0], [0, 0, 1]) and s[0, 0] == 2
    assert np.allclose(n[:, 0, 1], [0.6, 0.8, 0]) and s[0, 1] == 5
    assert np.array_equal(n[:, 0, 2], [0, 0, 0]) and s[0, 2] == 0


def test_decompose_rejects_wrong_shape():
    with pytest.raises(ShapeError):
        decompose(np.zeros((2, 3, 3)))


def test_classifier_uniform_and_dominant():
    s = np.random.default_rng(0).uniform(0, 2, (3, 4))
    assert np.allclose(classify_saliency(s, SaliencyClassifierParams.zeros()), 0.25)
    p = classify_saliency(s, SaliencyClassifierParams(np.zeros(4), np.array([10.0, 0, 0, 0])))
    # e^10 / (e^10 + 3) = 0.999864
    assert np.allclose(p[0], math.exp(10) / (math.exp(10) + 3), atol=1e-15, rtol=0)
    assert np.all(p[0] > 0.9998) and np.all(p[0] == p[0].max())


def test_classifier_matches_softmax_oracle():
    rng = np.random.default_rng(1)
    params = SaliencyClassifierParams(rng.normal(size=4), rng.normal(size=4))
    s = rng.uniform(0, 3, (4, 5))
    got = classify_saliency(s, params)
    for y in range(4):
        for x in range(5):
            want = oracles.softmax_pixel(params.weights * s[y, x] + params.biases)
            assert np.allclose(got[:, y, x], want, atol=1e-6, rtol=0)


def test_normal_loss_examples():
    up = field((0, 0, 1), (0, 0, 1))
    side = field((1, 0, 0), (1, 0, 0))
    assert normal_loss(up, up) == 0
    assert normal_loss(up, side) == pytest.approx(math.pi / 2)
    assert normal_loss(up, field((0, 0, 1), (1, 0, 0))) == pytest.approx(math.pi / 4)
    with pytest.raises(ShapeError):
        normal_loss(up, field((0, 0, 1)))


def test_normal_loss_symmetric():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(2, 3, 4, 4))
    a /= np.linalg.norm(a, axis=0)
    b /= np.linalg.norm(b, axis=0)
    assert normal_loss(a, b) == pytest.approx(normal_loss(b, a), abs=1e-15)


def test_seg_loss_examples():
    labels = np.random.default_rng(3).integers(0, 4, (4, 4))
    perfect = np.zeros((4, 4, 4))
    np.put_along_axis(perfect, labels[None], 1.0, axis=0)
    assert seg_loss(perfect, labels) == 0
    assert abs(seg_loss(np.full((4, 4, 4), 0.25), labels) - math.log(4)) <= 1e-6
    half = np.array([0.5, 0.5, 0.0, 0.0]).reshape(4, 1, 1)
    assert abs(seg_loss(half, np.zeros((1, 1), int)) - math.log(2)) <= 1e-6


def test_seg_loss_floor_and_errors():
    zero = np.zeros((4, 1, 1))
    assert seg_loss(zero, np.zeros((1, 1), int)) == pytest.approx(-math.log(1e-12))
    with pytest.raises(ShapeError):
        seg_loss(np.full((4, 2, 2), 0.25), np.zeros((3, 3), int))
    with pytest.raises(ValueError):
        seg_loss(np.full((4, 1, 1), 0.25), np.array([[4]]))


def test_seg_loss_non_negative():
    rng = np.random.default_rng(4)
    for _ in range(20):
        p = rng.dirichlet(np.ones(4), size=(3, 3)).transpose(2, 0, 1)
        assert seg_loss(p, rng.integers(0, 4, (3, 3))) > 0


def test_fuse_labels_examples():
    n_star = field((0, 0, 1), (1, 0, 0))
    assert np.array_equal(fuse_labels(n_star, np.zeros((1, 2), int)), n_star)
    v = fuse_labels(n_star, np.array([[3, 0]]))
    assert np.allclose(v[:, 0, 0], [0, 0, 0.1])


def test_fuse_then_decompose_round_trip():
    rng = np.random.default_rng(5)
    n_star = rng.normal(size=(3, 4, 4))
    n_star /= np.linalg.norm(n_star, axis=0)
    labels = rng.integers(0, 4, (4, 4))
    n, s = decompose(fuse_labels(n_star, labels))
    assert np.allclose(n, n_star, atol=1e-12)
    assert np.allclose(s, SemanticWeightTable().as_array()[labels], atol=1e-12)


def test_weight_table_validation():
    with pytest.raises(ValueError):
        SemanticWeightTable((1.0, 0.5))


def test_coupled_loss_zero_at_target():
    n_star = field((0, 0, 1), (0.6, 0.8, 0))
    labels = np.zeros((1, 2), int)
    V = fuse_labels(n_star, labels)
    params = SaliencyClassifierParams(np.zeros(4), np.array([100.0, 0, 0, 0]))
    total, seg, normal = coupled_loss(V, params, labels, n_star)
    assert total == 0 and seg == 0 and normal == 0


def test_gradient_zero_weights_is_tangential():
    V, _, labels, n_star = random_coupled_case(np.random.default_rng(6))
    grad, radial, tangential = coupled_gradient(V, SaliencyClassifierParams.zeros(), labels, n_star)
    assert np.array_equal(radial, np.zeros_like(radial))
    assert np.array_equal(grad, tangential)


def test_gradient_aligned_normals_is_radial():
    V, params, labels, _ = random_coupled_case(np.random.default_rng(7))
    n, _ = decompose(V)
    grad, radial, tangential = coupled_gradient(V, params, labels, n)
    assert np.max(np.abs(tangential)) <= 1e-9
    assert np.allclose(grad, radial, atol=1e-9)


def test_gradient_reconstruction_bit_exact():
    V, params, labels, n_star = random_coupled_case(np.random.default_rng(8), 5, 5)
    grad, radial, tangential = coupled_gradient(V, params, labels, n_star)
    assert np.array_equal(grad, radial + tangential)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    for _ in range(20):
        V, params, labels, n_star = random_coupled_case(rng)
        grad, _, _ = coupled_gradient(V, params, labels, n_star)
        fd = finite_diff_gradient(lambda v: coupled_loss(v, params, labels, n_star)[0], V, 1e-4)
        assert rel_error(grad, fd).max() <= 1e-5


def test_gradient_orthogonal_split():
    V, params, labels, n_star = random_coupled_case(np.random.default_rng(10), 10, 10, max_dot=0.999)
    _, radial, tangential = coupled_gradient(V, params, labels, n_star)
    r, t = radial.reshape(3, -1), tangential.reshape(3, -1)
    dots = np.abs(np.sum(r * t, axis=0))
    assert np.all(dots <= 1e-6 * (np.linalg.norm(r, axis=0) * np.linalg.norm(t, axis=0) + 1e-12))


def test_gradient_refuses_short_vectors():
    V, params, labels, n_star = random_coupled_case(np.random.default_rng(11))
    V[:, 1, 2] = 1e-7
    with pytest.raises(ValueError, match=r"\(1,2\)"):
        coupled_gradient(V, params, labels, n_star)


def test_auxiliary_loss_is_sum_of_terms():
    rng = np.random.default_rng(12)
    V, params, labels, n_star = random_coupled_case(rng)
    pred, target = rng.uniform(size=(2, 3, 3))
    total, terms = auxiliary_loss(V, params, labels, n_star, pred, target)
    n, s = decompose(V)
    assert terms["normal"] == normal_loss(n, n_star)
    assert terms["seg"] == seg_loss(classify_saliency(s, params), labels)
    assert terms["sta"] == stability_loss(pred, target)
    assert total == terms["normal"] + terms["seg"] + terms["sta"]
