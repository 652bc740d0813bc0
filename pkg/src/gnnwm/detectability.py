"""How hard is it to find the watermarked subgraphs without the secret?

Exact brute-force counts, the overlap probability for random search in two
forms, and a Monte-Carlo estimate to arbitrate between them.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .numeric import Rng


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def log10_comb_big(n: int, k: int) -> float:
    """log10 C(n, k) for a (possibly astronomically large) integer n and small k."""
    if k < 0 or k > n:
        raise ValueError("need 0 <= k <= n")
    return sum(math.log10(n - i) for i in range(k)) - math.log10(math.factorial(k))


def brute_force_space(n_train: int, n_sub: int, T: int) -> tuple[int, float]:
    """(#subgraphs of n_sub nodes, log10 #T-sets of such subgraphs)."""
    if not 0 <= n_sub <= n_train:
        raise ValueError("need 0 <= n_sub <= n_train")
    count = math.comb(n_train, n_sub)
    if T > count:
        return count, float("-inf")
    return count, log10_comb_big(count, T)


def scientific(n: int, digits: int = 2) -> str:
    """Exact big integer rendered as ``d.d×10^k`` from its decimal digits."""
    s = str(n)
    exp = len(s) - 1
    if digits <= 1:
        return f"{s[0]}e{exp}"
    rounded = round(int(s[: digits + 1]) / 10)
    if len(str(rounded)) > digits:
        rounded //= 10
        exp += 1
    r = str(rounded)
    return f"{r[0]}.{r[1:]}e{exp}"


def hypergeom_pmf(m: int, N: int, n_sub: int) -> float:
    """P(a random n_sub-subset shares exactly m nodes with a fixed n_sub-subset)."""
    if m < max(0, 2 * n_sub - N) or m > n_sub:
        return 0.0
    return math.exp(_log_comb(n_sub, m) + _log_comb(N - n_sub, n_sub - m) - _log_comb(N, n_sub))


def hypergeom_pmf_exact(m: int, N: int, n_sub: int) -> Fraction:
    return Fraction(math.comb(n_sub, m) * math.comb(N - n_sub, n_sub - m), math.comb(N, n_sub))


def _check(N, n_sub, T, j):
    if not (1 <= n_sub <= N):
        raise ValueError("need 1 <= n_sub <= N")
    if T < 1:
        raise ValueError("T must be positive")
    if j < 0:
        raise ValueError("j must be non-negative")


def overlap_probability_published(N: int, n_sub: int, T: int, j: int, exact: bool = False):
    """Verbatim published formula: 1 - (sum_{m=1}^{j} pmf(m))^T.

    The sum starts at m = 1, so it is P(1 <= overlap <= j) rather than
    P(overlap < j); kept as published and reported next to the standard tail.
    """
    _check(N, n_sub, T, j)
    top = min(j, n_sub)
    if exact:
        S = sum((hypergeom_pmf_exact(m, N, n_sub) for m in range(1, top + 1)), Fraction(0))
        return 1 - S ** T
    S = math.fsum(hypergeom_pmf(m, N, n_sub) for m in range(1, top + 1))
    if S <= 0.0:
        return 1.0
    return -math.expm1(T * math.log(S))


def overlap_probability_hypergeometric(N: int, n_sub: int, T: int, j: int, exact: bool = False):
    """P(a random n_sub-subset shares >= j nodes with at least one of T planted sets).

    Treats the T overlaps as independent draws: 1 - (1 - P(overlap >= j))^T.
    """
    _check(N, n_sub, T, j)
    if exact:
        tail = sum((hypergeom_pmf_exact(m, N, n_sub) for m in range(j, n_sub + 1)), Fraction(0))
        return 1 - (1 - tail) ** T
    tail = math.fsum(hypergeom_pmf(m, N, n_sub) for m in range(max(j, 0), n_sub + 1))
    tail = min(tail, 1.0)
    if tail >= 1.0:
        return 1.0
    return -math.expm1(T * math.log1p(-tail))


def overlap_probability_exact(N: int, n_sub: int, T: int, j: int) -> Fraction:
    """Exact P(max overlap with T disjoint planted sets >= j) for one random subset.

    Unlike :func:`overlap_probability_hypergeometric` this keeps the joint
    (multivariate hypergeometric) dependence between the T overlap counts.
    """
    _check(N, n_sub, T, j)
    if T * n_sub > N:
        raise ValueError("cannot plant T disjoint subgraphs of n_sub nodes")
    if j == 0:
        return Fraction(1)
    rest = N - T * n_sub
    # ways[k]: number of ways to take k nodes from the planted blocks, each block < j
    ways = {0: 1}
    for _ in range(T):
        nxt: dict = {}
        for k, wk in ways.items():
            for c in range(min(j - 1, n_sub) + 1):
                if k + c <= n_sub:
                    nxt[k + c] = nxt.get(k + c, 0) + wk * math.comb(n_sub, c)
        ways = nxt
    below = sum(wk * math.comb(rest, n_sub - k) for k, wk in ways.items() if 0 <= n_sub - k <= rest)
    return 1 - Fraction(below, math.comb(N, n_sub))


def monte_carlo_overlap(rng: Rng, N: int, n_sub: int, T: int, j: int, trials: int = 10**5,
                        batch: int | None = None) -> tuple[float, float]:
    """Estimate P(max overlap with any planted set >= j) and its standard error.

    Each trial plants T disjoint n_sub-sets and draws one random n_sub-set.
    By exchangeability the planted sets are fixed to consecutive id blocks
    and only the random subset is redrawn.
    """
    if trials < 10**4:
        raise ValueError("need at least 10^4 trials")
    if T * n_sub > N:
        raise ValueError("cannot plant T disjoint subgraphs of n_sub nodes")
    if j <= 0:
        return 1.0, 0.0
    if j > n_sub:
        return 0.0, 0.0
    owner = np.full(N, T, dtype=np.int64)
    owner[: T * n_sub] = np.repeat(np.arange(T), n_sub)
    batch = batch or max(1, 4_000_000 // N)
    hits = 0
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        # random n_sub-subset per row: the n_sub smallest of N iid uniforms
        keys = rng.random((b, N))
        picks = np.argpartition(keys, n_sub - 1, axis=1)[:, :n_sub]
        lab = owner[picks]
        counts = np.zeros((b, T + 1), dtype=np.int64)
        rows = np.repeat(np.arange(b), n_sub)
        np.add.at(counts, (rows, lab.ravel()), 1)
        hits += int(np.count_nonzero(counts[:, :T].max(axis=1) >= j))
        done += b
    p = hits / trials
    return p, math.sqrt(max(p * (1 - p), 0.0) / trials)


def overlap_curves(N_train: int, T: int, s_grid, j_values, rng: Rng | None = None,
                   mc_trials: int = 0) -> list[dict]:
    """Rows of (s, j, published, hypergeometric, Monte-Carlo, stderr) for each grid point."""
    from .graph import subgraph_size

    rows = []
    for s in s_grid:
        n_sub = subgraph_size(s, N_train)
        for j in j_values:
            jj = n_sub if j == "all" else int(j)
            row = {
                "s": float(s),
                "j": jj,
                "prob_paper": overlap_probability_published(N_train, n_sub, T, jj),
                "prob_hypergeom": overlap_probability_hypergeometric(N_train, n_sub, T, jj),
                "prob_mc": float("nan"),
                "mc_stderr": float("nan"),
            }
            if mc_trials and rng is not None and T * n_sub <= N_train:
                row["prob_mc"], row["mc_stderr"] = monte_carlo_overlap(
                    rng.spawn(len(rows)), N_train, n_sub, T, jj, mc_trials)
            rows.append(row)
    return rows
