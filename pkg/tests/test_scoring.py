import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import feature_norms_loops
from trimprune.errors import ContractError, ShapeError
from trimprune.scoring import (compute_scores, inverse_hessian_diag, score_gblm,
                               score_magnitude, score_sparsegpt, score_wanda)
from trimprune.tensor import Rng


def _per_row_rank(a):
    return np.argsort(np.argsort(a, axis=1, kind="stable"), axis=1, kind="stable")


def test_magnitude_examples():
    np.testing.assert_array_equal(score_magnitude([[-2, 3]]), [[2, 3]])
    np.testing.assert_array_equal(score_magnitude(np.zeros((2, 2))), np.zeros((2, 2)))
    w = Rng(1).gaussian_matrix(4, 4)
    np.testing.assert_array_equal(score_magnitude(w), [[abs(v) for v in row] for row in w])


def test_wanda_hand():
    w = [[1, -2], [3, 0.5]]
    # features with norms 2 and 1
    x = [[2, 0], [0, 1]]
    np.testing.assert_allclose(score_wanda(w, x), [[2, 2], [6, 0.5]])


def test_wanda_equal_norms_matches_magnitude_ranking():
    rng = Rng(2)
    w = rng.gaussian_matrix(5, 6)
    q, _ = np.linalg.qr(rng.normal((6, 6)))
    x = 3.0 * q  # orthogonal rows, all norms 3
    np.testing.assert_array_equal(_per_row_rank(score_wanda(w, x)), _per_row_rank(score_magnitude(w)))


def test_wanda_two_pass_oracle():
    rng = Rng(3)
    w, x = rng.gaussian_matrix(6, 10), rng.gaussian_matrix(10, 32)
    norms = feature_norms_loops(x)
    expected = np.abs(w.astype(np.float64)) * norms[None, :]
    np.testing.assert_allclose(score_wanda(w, x), expected, rtol=1e-6)


def test_wanda_shape_mismatch():
    with pytest.raises(ShapeError):
        score_wanda(np.ones((2, 3)), np.ones((4, 5)))


def test_sparsegpt_orthogonal_equal_norms_matches_magnitude_ranking():
    rng = Rng(4)
    w = rng.gaussian_matrix(4, 5)
    q, _ = np.linalg.qr(rng.normal((8, 8)))
    x = 2.0 * q[:5]  # 5 orthonormal rows in R^8, scaled
    np.testing.assert_array_equal(_per_row_rank(score_sparsegpt(w, x)), _per_row_rank(score_magnitude(w)))


def test_sparsegpt_explicit_inverse_oracle():
    rng = Rng(5)
    w, x = rng.gaussian_matrix(3, 3), rng.gaussian_matrix(3, 8)
    x64 = x.astype(np.float64)
    h = x64 @ x64.T
    h += 1e-2 * np.mean(np.diag(h)) * np.eye(3)
    hinv = np.linalg.inv(h)
    expected = w.astype(np.float64) ** 2 / np.diag(hinv)[None, :]
    np.testing.assert_allclose(score_sparsegpt(w, x, 1e-2), expected, rtol=1e-5)


def test_sparsegpt_rejects_zero_damping():
    with pytest.raises(ContractError):
        score_sparsegpt(np.ones((2, 2)), np.ones((2, 3)), damping=0.0)


def test_inverse_hessian_diag_positive_for_rank_deficient_inputs():
    x = np.zeros((4, 2))
    x[0] = 1.0
    assert np.all(inverse_hessian_diag(x, 1e-2) > 0)


def test_sparsegpt_large_damping_tends_to_magnitude_ranking():
    rng = Rng(6)
    w = rng.gaussian_matrix(4, 6)
    x = rng.gaussian_matrix(6, 10) * np.array([1, 5, 0.2, 3, 1, 2], dtype=np.float32)[:, None]
    ranks = _per_row_rank(score_sparsegpt(w, x, damping=1e8))
    np.testing.assert_array_equal(ranks, _per_row_rank(score_magnitude(w) ** 2))


def test_gblm_examples():
    np.testing.assert_allclose(score_gblm([[1.0]], [[2.0]], [[3.0]], blend=1.0), [[5.0]])
    rng = Rng(7)
    w, x = rng.gaussian_matrix(4, 6), rng.gaussian_matrix(6, 9)
    g = np.abs(rng.gaussian_matrix(4, 6))
    np.testing.assert_array_equal(score_gblm(w, x, g, blend=0.0), score_wanda(w, x))
    expected = np.abs(w.astype(np.float64)) * (feature_norms_loops(x)[None, :] + 0.5 * g)
    np.testing.assert_allclose(score_gblm(w, x, g, blend=0.5), expected, rtol=1e-6)


def test_gblm_shape_mismatch():
    with pytest.raises(ShapeError):
        score_gblm(np.ones((2, 2)), np.ones((2, 3)), np.ones((3, 2)))


def test_compute_scores_unknown_metric():
    with pytest.raises(ContractError):
        compute_scores("random", np.ones((2, 2)))


@pytest.mark.parametrize("metric", ["magnitude", "wanda", "sparsegpt", "gblm"])
def test_sign_invariance(metric):
    rng = Rng(8)
    w, x = rng.gaussian_matrix(5, 7), rng.gaussian_matrix(7, 12)
    g = np.abs(rng.gaussian_matrix(5, 7))
    a = compute_scores(metric, w, x, g)
    b = compute_scores(metric, -w, x, g)
    np.testing.assert_array_equal(a, b)
    assert np.all(a >= 0) and np.all(np.isfinite(a))


@given(st.floats(0.01, 100.0), st.integers(0, 2**32))
@settings(max_examples=30, deadline=None)
def test_wanda_activation_scaling(c, seed):
    rng = Rng(seed)
    w, x = rng.gaussian_matrix(4, 6), rng.gaussian_matrix(6, 8)
    a = score_wanda(w, x).astype(np.float64)
    b = score_wanda(w, (c * x.astype(np.float64))).astype(np.float64)
    np.testing.assert_allclose(b, c * a, rtol=1e-5)
    # ranking only checked where scores are well separated
    gaps = np.diff(np.sort(a, axis=1), axis=1)
    if gaps.min() > 1e-4 * a.max():
        np.testing.assert_array_equal(_per_row_rank(a), _per_row_rank(b))
