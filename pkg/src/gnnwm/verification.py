"""Matching-indices statistic, empirical null and the ownership z-test."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .explain import KernelConfig, RidgeProjector, binarize
from .graph import Graph, SplitSpec, random_subgraphs, subgraph_size
from .models import GnnModel, Scope, forward, logits_tape, model_hash
from . import autodiff as ad
from .numeric import Rng, normal_sf

NULL_MAGIC = "GNNWM-NULL v1"
SIGMA_FLOOR = 1e-9


class DegenerateNullError(ValueError):
    pass


class VerificationConfigError(ValueError):
    pass


def count_MI(binarized) -> int:
    """Positions where every binarized explanation has the same nonzero sign."""
    B = np.asarray([np.asarray(b) for b in binarized])
    if B.ndim != 2:
        raise ValueError("binarized explanations must share one length")
    if B.shape[0] < 2:
        raise ValueError("need at least two explanations")
    first = B[0]
    agree = (first != 0) & np.all(B == first, axis=0)
    return int(np.count_nonzero(agree))


def explain_node_set(model: GnnModel, g: Graph, nodes, kernel: KernelConfig = KernelConfig()) -> np.ndarray:
    """Explanation of the model's induced-subgraph predictions on ``nodes``."""
    P = forward(model, g, nodes, scope="induced")
    return RidgeProjector(g.features[np.asarray(nodes)], kernel).explain(P)


def binarized_explanation(model, g, nodes, kernel: KernelConfig = KernelConfig()) -> np.ndarray:
    return binarize(explain_node_set(model, g, nodes, kernel), kernel.zero_tol)


@dataclass
class NullMIStats:
    mu: float
    sigma: float
    samples: np.ndarray
    D: int
    I: int
    T: int
    n_sub: int
    seed: int
    model_hash: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int64)


def build_null(
    model: GnnModel,
    g: Graph,
    split: SplitSpec,
    T: int,
    s: float,
    D: int = 200,
    I: int = 1000,
    rng: Rng | None = None,
    kernel: KernelConfig = KernelConfig(),
    n_sub: int | None = None,
) -> NullMIStats:
    """Empirical distribution of MI over random T-sets of training subgraphs.

    Each of the D pool explanations is computed and binarized once; the I
    simulations then draw T distinct pool members.  The spread uses the
    population (1/I) formula.
    """
    if D < T:
        raise ValueError(f"pool size D={D} is smaller than T={T}")
    if I < 1:
        raise ValueError("need at least one simulation")
    rng = rng if rng is not None else Rng(0)
    n_sub = n_sub if n_sub is not None else subgraph_size(s, len(split.train))
    pool_rng, sim_rng = rng.spawn(0), rng.spawn(1)
    pool = random_subgraphs(pool_rng, split.train, D, n_sub)
    bins = np.array([binarized_explanation(model, g, nodes, kernel) for nodes in pool])
    samples = np.empty(I, dtype=np.int64)
    for i in range(I):
        pick = sim_rng.choice(D, size=T, replace=False)
        samples[i] = count_MI(bins[pick])
    mu = float(samples.mean())
    sigma = float(np.sqrt(np.mean((samples - mu) ** 2)))
    return NullMIStats(mu, sigma, samples, D, I, T, n_sub, rng.seed, model_hash(model))


@dataclass
class VerificationReport:
    MI_cdt: int
    z_test: float
    p_value: float
    verdict: bool
    alpha_v: float
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        if not math.isfinite(d["z_test"]):
            d["z_test"] = None
        return json.dumps(d, indent=2, sort_keys=True)


def z_test(mi: float, null: NullMIStats, alpha_v: float) -> tuple[float, float, bool]:
    if null.sigma < SIGMA_FLOOR:
        raise DegenerateNullError(
            f"null standard deviation {null.sigma:.3g} is degenerate; the z-test is undefined"
        )
    z = (mi - null.mu) / null.sigma
    p = normal_sf(z)
    return z, p, p < alpha_v


def verify(
    model: GnnModel,
    g: Graph,
    candidates,
    null: NullMIStats,
    alpha_v: float = 0.01,
    kernel: KernelConfig = KernelConfig(),
    provenance: dict | None = None,
) -> VerificationReport:
    candidates = [np.asarray(c, dtype=np.int64) for c in candidates]
    if len(candidates) != null.T:
        raise VerificationConfigError(f"got {len(candidates)} candidate subgraphs, null was built for T={null.T}")
    if any(len(c) != null.n_sub for c in candidates):
        raise VerificationConfigError(f"candidate subgraphs must have n_sub={null.n_sub} nodes")
    if not 0 < alpha_v < 1:
        raise ValueError("alpha_v must lie in (0, 1)")
    bins = [binarized_explanation(model, g, c, kernel) for c in candidates]
    mi = count_MI(bins)
    z, p, verdict = z_test(mi, null, alpha_v)
    prov = {"model_hash": null.model_hash, "T": null.T, "n_sub": null.n_sub,
            "null_seed": null.seed, "D": null.D, "I": null.I}
    prov.update(provenance or {})
    return VerificationReport(mi, float(z), float(p), bool(verdict), float(alpha_v), prov)


def normality_test(samples) -> float:
    """Shapiro-Wilk p-value (Royston's AS R94 algorithm, via scipy)."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if not 20 <= x.size <= 5000:
        raise ValueError("normality_test needs between 20 and 5000 samples")
    if np.ptp(x) == 0:
        raise ValueError("constant sample: Shapiro-Wilk is undefined")
    return float(stats.shapiro(x).pvalue)


def dumps_null(null: NullMIStats) -> str:
    lines = [
        NULL_MAGIC,
        f"model_hash {null.model_hash}",
        f"T {null.T}",
        f"n_sub {null.n_sub}",
        f"D {null.D}",
        f"I {null.I}",
        f"seed {null.seed}",
        f"mu {null.mu!r}",
        f"sigma {null.sigma!r}",
        "samples " + " ".join(str(int(v)) for v in null.samples),
    ]
    return "\n".join(lines) + "\n"


def loads_null(text: str) -> NullMIStats:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != NULL_MAGIC:
        raise ValueError("not a GNNWM null-stats file")
    kv = {}
    for ln in lines[1:]:
        k, _, rest = ln.partition(" ")
        kv[k] = rest.strip()
    samples = np.array([int(t) for t in kv["samples"].split()], dtype=np.int64)
    if samples.size != int(kv["I"]):
        raise ValueError("null file sample count does not match I")
    return NullMIStats(float(kv["mu"]), float(kv["sigma"]), samples, int(kv["D"]), int(kv["I"]),
                       int(kv["T"]), int(kv["n_sub"]), int(kv["seed"]), kv["model_hash"])


def save_null(null: NullMIStats, path) -> None:
    Path(path).write_text(dumps_null(null), encoding="utf-8")


def load_null(path) -> NullMIStats:
    return loads_null(Path(path).read_text(encoding="utf-8"))
