import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from linbrdf.subspace import fit_subspace, thin_svd


def test_orthogonal_columns():
    B = np.zeros((10, 3))
    B[0, 0], B[3, 1], B[7, 2] = 5.0, 3.0, 1.0
    sub = fit_subspace(B, 3)
    np.testing.assert_allclose(sub.singular_values, [5.0, 3.0, 1.0])
    np.testing.assert_allclose(np.abs(sub.U_hat), np.abs(B) / [5.0, 3.0, 1.0], atol=1e-12)


def test_rank_one():
    u = np.arange(1.0, 41.0)
    B = np.outer(u, [1.0, 2.0, -3.0])
    sub = fit_subspace(B, 1)
    np.testing.assert_allclose(sub.U_hat[:, 0], u / np.linalg.norm(u), atol=1e-12)
    with pytest.raises(ValueError):
        fit_subspace(B, 2)


def test_reconstruction_error_matches_tail(rng):
    B = rng.normal(size=(200, 30))
    s = np.linalg.svd(B, compute_uv=False)
    for N in (1, 5, 29):
        sub = fit_subspace(B, N)
        R = sub.U_hat @ sub.project(B)
        assert np.linalg.norm(B - R) ** 2 == pytest.approx(np.sum(s[N:] ** 2), rel=1e-9)


def test_project_leading_vector(rng):
    sub = fit_subspace(rng.normal(size=(60, 5)), 3)
    np.testing.assert_allclose(sub.project(sub.U_hat[:, 0]), [1.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_array_equal(sub.project(np.zeros(60)), 0.0)


def test_gram_and_direct_paths_agree(rng):
    B = rng.normal(size=(400, 12))  # tall enough for the Gram route
    U, s, V = thin_svd(B)
    U2, s2, Vt2 = np.linalg.svd(B, full_matrices=False)
    np.testing.assert_allclose(s, s2, rtol=1e-10)
    np.testing.assert_allclose(np.abs(U.T @ U2), np.eye(12), atol=1e-8)
    np.testing.assert_allclose(U * s @ V.T, B, atol=1e-10)


def test_sign_convention(rng):
    U, _, _ = thin_svd(rng.normal(size=(50, 6)))
    idx = np.argmax(np.abs(U), axis=0)
    assert np.all(U[idx, np.arange(6)] > 0)


def test_uncentered(rng):
    B = 10.0 + 0.01 * rng.normal(size=(80, 4))
    sub = fit_subspace(B, 1)
    # leading direction is the (uncentered) mean, not a noise direction
    assert abs(sub.U_hat[:, 0] @ np.ones(80) / np.sqrt(80)) > 0.999


def test_dimension_bounds(small_basis):
    with pytest.raises(ValueError):
        fit_subspace(small_basis, 0)
    with pytest.raises(ValueError):
        fit_subspace(small_basis, small_basis.n + 1)
    with pytest.raises(ValueError):
        fit_subspace(small_basis, 2).project(np.ones(3))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 48, elements=st.floats(-1e3, 1e3)))
def test_projection_is_a_contraction(rho):
    sub = fit_subspace(np.random.default_rng(5).normal(size=(48, 6)), 4)
    assert np.linalg.norm(sub.project(rho)) <= np.linalg.norm(rho) * (1 + 1e-12) + 1e-12
