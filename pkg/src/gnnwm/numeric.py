"""Scalar statistics, seeded randomness and finite-difference gradient checks."""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, special

__all__ = [
    "RNG_ALGORITHM",
    "Rng",
    "derive_seed",
    "normal_cdf",
    "normal_sf",
    "normal_quantile",
    "solve_spd",
    "grad_check",
]

# Bumping this string invalidates replay of previously written secrets.
RNG_ALGORITHM = "philox4x64-10/v1"

_SEED_MASK = (1 << 64) - 1


def derive_seed(seed: int, stream: int) -> int:
    """Child seed for sub-stream ``stream`` of ``seed``.

    Derivation is ``SeedSequence(seed, spawn_key=(stream,))`` reduced to a
    single 64-bit word, so children are stable across processes and runs.
    """
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    ss = np.random.SeedSequence(seed & _SEED_MASK, spawn_key=(stream,))
    return int(ss.generate_state(1, np.uint64)[0])


class Rng:
    """Seeded Philox4x64-10 counter-based generator.

    Single-owner; use :meth:`spawn` to hand independent streams to workers.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int):
        if not 0 <= int(seed) <= _SEED_MASK:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def spawn(self, stream: int) -> "Rng":
        return Rng(derive_seed(self.seed, stream))

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def exponential(self, scale=1.0, size=None):
        return self._gen.exponential(scale, size)

    def permutation(self, x):
        return self._gen.permutation(x)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, algorithm={self.algorithm!r})"


def normal_cdf(z: float) -> float:
    z = float(z)
    if not math.isfinite(z):
        raise ValueError("normal_cdf requires a finite argument")
    return float(special.ndtr(z))


def normal_sf(z: float) -> float:
    """Upper tail ``1 - Phi(z)`` without cancellation for large ``z``."""
    z = float(z)
    if not math.isfinite(z):
        raise ValueError("normal_sf requires a finite argument")
    return float(special.ndtr(-z))


def normal_quantile(alpha: float) -> float:
    """Upper-tail z-score: the ``z`` with ``1 - Phi(z) = alpha``."""
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(-special.ndtri(alpha))


def solve_spd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A`` by Cholesky."""
    c, low = linalg.cho_factor(A, lower=True, check_finite=True)
    return linalg.cho_solve((c, low), b, check_finite=False)


LossFn = Callable[[list], tuple]


def grad_check(
    loss_fn: LossFn,
    params: Sequence[np.ndarray],
    step: float = 1e-4,
    max_coords: int = 400,
    rng: Rng | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(loss, grads)`` with one gradient array
    per parameter.  When the parameters hold more than ``max_coords`` scalars
    a random sample of ``max(200, max_coords)`` coordinates is checked.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = [np.array(p, dtype=np.float64, copy=True) for p in params]
    loss, grads = loss_fn(params)
    if not np.isfinite(loss):
        raise ValueError("loss is not finite at the base point")
    grads = [np.asarray(g, dtype=np.float64) for g in grads]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if len(coords) > max_coords:
        rng = rng or Rng(0)
        pick = rng.choice(len(coords), size=max(200, max_coords), replace=False)
        coords = [coords[k] for k in sorted(pick)]

    worst = 0.0
    for i, j in coords:
        flat = params[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + step
        f_plus, _ = loss_fn(params)
        flat[j] = orig - step
        f_minus, _ = loss_fn(params)
        flat[j] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"non-finite loss at perturbed coordinate {(i, j)}")
        numeric = (f_plus - f_minus) / (2.0 * step)
        analytic = grads[i].reshape(-1)[j]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
