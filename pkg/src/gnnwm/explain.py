"""Closed-form kernel ridge feature attributions and their gradient in P.

An explanation of ``n`` nodes with features ``X`` (n x F) and softmax
outputs ``P`` (n x C) is the ridge solution

    e = (Kt^T Kt + lam I)^{-1} Kt^T Lt

where column ``k`` of ``Kt`` is the vectorised, centered and
Frobenius-normalised Gaussian kernel of feature ``k`` and ``Lt`` is the same
construction applied to the rows of ``P``.  ``Kt`` depends on ``X`` only, so
the projection ``(Kt^T Kt + lam I)^{-1} Kt^T`` is computed once per node set
by :class:`RidgeProjector` and reused across training epochs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import autodiff as ad

NORM_TOL = 1e-12


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    """Kernel widths (``None`` = median heuristic), ridge strength, zero tolerances."""

    sigma_x: float | None = None
    sigma_p: float | None = None
    lam: float = 1e-2
    zero_tol: float = 1e-12
    norm_tol: float = NORM_TOL

    def __post_init__(self):
        for name in ("sigma_x", "sigma_p"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.lam < 0 or self.zero_tol < 0 or self.norm_tol < 0:
            raise ValueError("lam, zero_tol and norm_tol must be non-negative")


def _pairwise_median(D: np.ndarray) -> float:
    iu = np.triu_indices(D.shape[0], k=1)
    med = float(np.median(D[iu])) if iu[0].size else 0.0
    return med if med > 0 else 1.0


def median_width_features(X: np.ndarray) -> np.ndarray:
    """Per-column median of pairwise |x_u - x_v| (1.0 where that median is 0)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    iu = np.triu_indices(n, k=1)
    if iu[0].size == 0:
        return np.ones(X.shape[1])
    diffs = np.abs(X[iu[0]] - X[iu[1]])
    med = np.median(diffs, axis=0)
    return np.where(med > 0, med, 1.0)


def median_width_predictions(P: np.ndarray) -> float:
    return _pairwise_median(np.sqrt(_sq_dists(P)))


def _sq_dists(P: np.ndarray) -> np.ndarray:
    diff = P[:, None, :] - P[None, :, :]
    return np.einsum("uvc,uvc->uv", diff, diff)


def gaussian_feature_kernel(x_col, sigma_x: float) -> np.ndarray:
    x = np.asarray(x_col, dtype=np.float64).ravel()
    if not sigma_x > 0:
        raise ValueError("sigma_x must be positive")
    if x.size < 2:
        raise ValueError("need at least two nodes")
    d = x[:, None] - x[None, :]
    return np.exp(-(d * d) / (2.0 * sigma_x * sigma_x))


def _center(K: np.ndarray) -> np.ndarray:
    r = K.mean(axis=1, keepdims=True)
    c = K.mean(axis=0, keepdims=True)
    return K - r - c + K.mean()


def center_normalize(K: np.ndarray, norm_tol: float = NORM_TOL) -> np.ndarray:
    """``HKH / ||HKH||_F``; the zero matrix when ``||HKH||_F < norm_tol``."""
    Z = _center(np.asarray(K, dtype=np.float64))
    nrm = np.linalg.norm(Z)
    if nrm < norm_tol:
        return np.zeros_like(Z)
    return Z / nrm


def assemble_K_tilde(X: np.ndarray, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    """(n^2, F) matrix whose columns are vec(center_normalize(K^(k)))."""
    X = np.asarray(X, dtype=np.float64)
    n, F = X.shape
    if n < 2:
        raise ValueError("need at least two nodes")
    sig = np.full(F, cfg.sigma_x) if cfg.sigma_x is not None else median_width_features(X)
    d = X[:, None, :] - X[None, :, :]
    K = np.exp(-(d * d) / (2.0 * sig * sig))           # n x n x F
    Z = K - K.mean(axis=1, keepdims=True) - K.mean(axis=0, keepdims=True) + K.mean(axis=(0, 1))
    nrm = np.sqrt(np.einsum("uvk,uvk->k", Z, Z))
    scale = np.divide(1.0, nrm, out=np.zeros_like(nrm), where=nrm >= cfg.norm_tol)
    return (Z * scale).reshape(n * n, F)


def assemble_L_tilde(P: np.ndarray, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.shape[0] < 2:
        raise ValueError("need at least two nodes")
    sigma_p = cfg.sigma_p if cfg.sigma_p is not None else median_width_predictions(P)
    L = np.exp(-_sq_dists(P) / (2.0 * sigma_p * sigma_p))
    return center_normalize(L, cfg.norm_tol).reshape(-1)


class RidgeProjector:
    """Cached ``(Kt^T Kt + lam I)^{-1} Kt^T`` for one node set.

    Feature columns with an all-zero ``Kt`` column are excluded from the
    solve; their attribution is exactly zero.
    """

    def __init__(self, X: np.ndarray, cfg: KernelConfig = KernelConfig()):
        X = np.asarray(X, dtype=np.float64)
        self.cfg = cfg
        self.n, self.F = X.shape
        self.K_tilde = assemble_K_tilde(X, cfg)
        self.active = np.flatnonzero(np.any(self.K_tilde != 0.0, axis=0))
        Ka = self.K_tilde[:, self.active]
        G = Ka.T @ Ka
        if cfg.lam == 0.0 and self.active.size < self.F:
            raise SingularSystemError("constant feature columns make the system singular with lam = 0")
        G[np.diag_indices_from(G)] += cfg.lam
        try:
            factor = linalg.cho_factor(G, lower=True)
        except linalg.LinAlgError as exc:
            raise SingularSystemError("ridge normal matrix is not positive definite") from exc
        self._factor = factor
        self.projection = linalg.cho_solve(factor, Ka.T)   # |active| x n^2

    def sigma_p(self, P: np.ndarray) -> float:
        return self.cfg.sigma_p if self.cfg.sigma_p is not None else median_width_predictions(P)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Attribution for an arbitrary target vector ``Lt``."""
        e = np.zeros(self.F)
        e[self.active] = self.projection @ rhs
        return e

    def explain(self, P: np.ndarray, sigma_p: float | None = None) -> np.ndarray:
        sp_ = sigma_p if sigma_p is not None else self.sigma_p(P)
        L_t = _l_tilde(P, sp_, self.cfg.norm_tol)[0]
        return self.solve(L_t.reshape(-1))

    def vjp(self, P: np.ndarray, g_e: np.ndarray, sigma_p: float) -> np.ndarray:
        """``(de/dP)^T g_e`` with ``sigma_p`` held fixed."""
        P = np.asarray(P, dtype=np.float64)
        _, L, Z, nrm = _l_tilde(P, sigma_p, self.cfg.norm_tol)
        if nrm < self.cfg.norm_tol:
            return np.zeros_like(P)
        g_l = (self.projection.T @ g_e[self.active]).reshape(self.n, self.n)
        Lbar = Z / nrm
        g_Z = (g_l - np.sum(g_l * Lbar) * Lbar) / nrm
        g_L = _center(g_Z)
        g_D = g_L * L * (-1.0 / (2.0 * sigma_p * sigma_p))
        S = g_D + g_D.T
        return 2.0 * (S.sum(axis=1)[:, None] * P - S @ P)


def _l_tilde(P: np.ndarray, sigma_p: float, norm_tol: float):
    P = np.asarray(P, dtype=np.float64)
    L = np.exp(-_sq_dists(P) / (2.0 * sigma_p * sigma_p))
    Z = _center(L)
    nrm = float(np.linalg.norm(Z))
    Lbar = Z / nrm if nrm >= norm_tol else np.zeros_like(Z)
    return Lbar, L, Z, nrm


def explain(X: np.ndarray, P: np.ndarray, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    """F-dimensional attribution vector for the node set with features X, outputs P."""
    X = np.asarray(X, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if X.shape[0] != P.shape[0]:
        raise ValueError("X and P must have the same number of rows")
    return RidgeProjector(X, cfg).explain(P)


def explain_grad_wrt_P(X: np.ndarray, P: np.ndarray, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    """Jacobian ``de/dP`` as an (F, n, C) array, kernel width of P held fixed."""
    proj = RidgeProjector(X, cfg)
    P = np.asarray(P, dtype=np.float64)
    sp_ = proj.sigma_p(P)
    J = np.zeros((proj.F,) + P.shape)
    for k in proj.active:
        g = np.zeros(proj.F)
        g[k] = 1.0
        J[k] = proj.vjp(P, g, sp_)
    return J


def explanation_op(proj: RidgeProjector, P: ad.Tensor) -> ad.Tensor:
    """Tape node for ``e = explain(X, P)``; kernel width of P is a stop-gradient."""
    sigma_p = proj.sigma_p(P.value)
    e = proj.explain(P.value, sigma_p)
    out = ad.Tensor(e, (P,))
    out._backward = lambda g: P._accum(proj.vjp(P.value, g, sigma_p))
    return out


def binarize(e, tau: float = 1e-12) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    out = np.zeros(e.shape, dtype=np.int8)
    out[e > tau] = 1
    out[e < -tau] = -1
    return out
