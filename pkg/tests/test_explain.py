import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from gnnwm.explain import (KernelConfig, RidgeProjector, SingularSystemError, assemble_K_tilde,
                           assemble_L_tilde, binarize, center_normalize, explain, explain_grad_wrt_P,
                           gaussian_feature_kernel, median_width_features, median_width_predictions)
from gnnwm.numeric import Rng

from conftest import fd_grad


def _softmax_rows(rng, n, C, scale=2.0):
    Z = rng.normal(size=(n, C)) * scale
    E = np.exp(Z - Z.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def test_feature_kernel_analytic_values(rng):
    assert_array_equal(gaussian_feature_kernel([2.0, 2.0, 2.0], 0.7), np.ones((3, 3)))
    s = 0.8
    K = gaussian_feature_kernel([0.0, s * np.sqrt(2)], s)
    assert abs(K[0, 1] - np.exp(-1)) < 1e-15
    x = rng.normal(size=9)
    K = gaussian_feature_kernel(x, 1.3)
    for u in range(9):
        for v in range(9):
            assert abs(K[u, v] - np.exp(-((x[u] - x[v]) ** 2) / (2 * 1.3 ** 2))) < 1e-12


def test_center_normalize_degenerate_and_hand_fixture():
    assert_array_equal(center_normalize(np.ones((4, 4))), np.zeros((4, 4)))
    K = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.3], [0.2, 0.3, 1.0]])
    H = np.eye(3) - np.ones((3, 3)) / 3
    ref = H @ K @ H
    assert_allclose(center_normalize(K), ref / np.linalg.norm(ref), atol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(2, 9), st.integers(1, 4)),
              elements=st.floats(-5, 5, allow_nan=False)))
@settings(max_examples=80, deadline=None)
def test_center_normalize_properties(X):
    for k in range(X.shape[1]):
        K = gaussian_feature_kernel(X[:, k], 1.0)
        Kb = center_normalize(K)
        nrm = np.linalg.norm(Kb)
        if nrm == 0:
            continue
        assert abs(nrm - 1.0) < 1e-12
        assert np.max(np.abs(Kb.sum(axis=0))) < 1e-9
        assert np.max(np.abs(Kb.sum(axis=1))) < 1e-9


def test_K_tilde_columns():
    X = np.array([[0.0, 3.0], [1.0, 3.0]])
    Kt = assemble_K_tilde(X, KernelConfig(sigma_x=1.0))
    assert_array_equal(Kt[:, 1], 0.0)
    # n=2: HKH has entries +-(1 - k)/2 with k = exp(-1/2), so the unit-norm column is [1,-1,-1,1]/2
    assert_allclose(Kt[:, 0], [0.5, -0.5, -0.5, 0.5], atol=1e-15)


def test_K_tilde_column_permutation(rng):
    X = rng.exponential(size=(6, 5))
    perm = np.array([3, 0, 4, 1, 2])
    cfg = KernelConfig(sigma_x=0.9)
    assert_allclose(assemble_K_tilde(X[:, perm], cfg), assemble_K_tilde(X, cfg)[:, perm], atol=1e-15)


def test_K_tilde_median_widths_match_per_column_kernels(rng):
    X = rng.exponential(size=(7, 3))
    sig = median_width_features(X)
    Kt = assemble_K_tilde(X)
    for k in range(3):
        ref = center_normalize(gaussian_feature_kernel(X[:, k], sig[k])).reshape(-1)
        assert_allclose(Kt[:, k], ref, atol=1e-12)


def test_median_width_fallbacks():
    assert_array_equal(median_width_features(np.zeros((5, 2))), [1.0, 1.0])
    assert median_width_predictions(np.full((4, 3), 0.25)) == 1.0


def test_L_tilde_degenerate_and_two_node():
    assert_array_equal(assemble_L_tilde(np.full((3, 2), 0.5)), 0.0)
    P = np.array([[0.9, 0.1], [0.2, 0.8]])
    assert_allclose(assemble_L_tilde(P, KernelConfig(sigma_p=0.5)), [0.5, -0.5, -0.5, 0.5], atol=1e-15)


def test_L_tilde_node_permutation(rng):
    P = _softmax_rows(rng, 5, 3)
    perm = np.array([2, 4, 0, 1, 3])
    cfg = KernelConfig(sigma_p=0.6)
    L = assemble_L_tilde(P, cfg).reshape(5, 5)
    Lp = assemble_L_tilde(P[perm], cfg).reshape(5, 5)
    assert_allclose(Lp, L[np.ix_(perm, perm)], atol=1e-14)


def test_explain_all_constant_features_is_zero(rng):
    X = np.tile(rng.normal(size=4), (6, 1))
    assert_array_equal(explain(X, _softmax_rows(rng, 6, 3)), 0.0)


def test_explain_two_node_scalar():
    X = np.array([[0.0], [1.0]])
    P = np.array([[0.7, 0.3], [0.1, 0.9]])
    cfg = KernelConfig(sigma_x=1.0, sigma_p=1.0, lam=0.01)
    k = assemble_K_tilde(X, cfg)[:, 0]
    l = assemble_L_tilde(P, cfg)
    assert_allclose(explain(X, P, cfg), [(k @ l) / (k @ k + 0.01)], rtol=1e-14)
    # both are [1,-1,-1,1]/2, so the value is 1 / 1.01
    assert abs(explain(X, P, cfg)[0] - 1 / 1.01) < 1e-14


@pytest.mark.parametrize("seed", range(5))
def test_explain_residual_and_dense_oracle(seed):
    rng = Rng(seed)
    n, F = 8, 12
    X = rng.exponential(size=(n, F)) * (rng.random((n, F)) < 0.6)
    X[:, 0] = 1.5                                      # one inactive column
    P = _softmax_rows(rng, n, 4)
    cfg = KernelConfig()
    e = explain(X, P, cfg)
    Kt = assemble_K_tilde(X, cfg)
    Lt = assemble_L_tilde(P, cfg)
    A = Kt.T @ Kt + cfg.lam * np.eye(F)
    assert np.linalg.norm(A @ e - Kt.T @ Lt) < 1e-9
    assert_allclose(e, np.linalg.solve(A, Kt.T @ Lt), atol=1e-12)
    assert e[0] == 0.0


def test_lambda_zero_with_constant_feature_is_singular(rng):
    X = rng.normal(size=(5, 3))
    X[:, 1] = 0.0
    with pytest.raises(SingularSystemError):
        RidgeProjector(X, KernelConfig(lam=0.0))


def test_jacobian_matches_finite_differences(rng):
    X = rng.exponential(size=(5, 3))
    P = _softmax_rows(rng, 5, 3, scale=1.0)
    sp_ = median_width_predictions(P)
    cfg = KernelConfig(sigma_p=sp_)
    J = explain_grad_wrt_P(X, P, cfg)
    for k in range(3):
        num = fd_grad(lambda Q: explain(X, Q, cfg)[k], P, h=1e-5)
        err = np.max(np.abs(J[k] - num)) / max(np.max(np.abs(num)), 1e-12)
        assert err < 1e-5


def test_jacobian_zero_for_constant_P(rng):
    X = rng.exponential(size=(4, 3))
    assert_array_equal(explain_grad_wrt_P(X, np.full((4, 2), 0.5), KernelConfig(sigma_p=1.0)), 0.0)


def test_larger_lambda_shrinks_projection(rng):
    X = rng.exponential(size=(6, 5))
    norms = [np.linalg.norm(RidgeProjector(X, KernelConfig(lam=lam)).projection, 2) for lam in (1e-3, 1e-2, 2e-2)]
    assert norms[0] >= norms[1] >= norms[2]


def test_binarize():
    assert_array_equal(binarize([0.3, -0.2, 0.0]), [1, -1, 0])
    assert_array_equal(binarize([1e-13, -1e-13, 5e-13], 1e-12), [0, 0, 0])
    b = binarize(np.array([0.5, -3.0, 0.0, 2e-12]))
    assert_array_equal(binarize(b.astype(float)), b)
