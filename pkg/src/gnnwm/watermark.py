"""Watermark design, hinge loss and the embedding training loop."""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .explain import KernelConfig, RidgeProjector, binarize, explanation_op
from .graph import Graph, SplitSpec, SubgraphSet, sample_subgraphs
from .models import GnnModel, Scope, fit, init_model, logits_tape, model_hash
from .numeric import RNG_ALGORITHM, Rng, normal_quantile

SECRET_MAGIC = "GNNWM-SECRET v1"

# Sub-stream indices of the embedding seed.
STREAM_SPLIT = 0
STREAM_SUBGRAPHS = 1
STREAM_PATTERN = 2
STREAM_MODEL = 3
STREAM_NULL = 4


class DesignInfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class WatermarkDesign:
    F: int
    T: int
    alpha_tgt: float
    alpha_lb: float
    p_match: float
    mu_nat_p: float
    sigma_nat_p: float
    z_tgt: float
    z_lb: float
    mi_tgt: float
    mi_lb: float
    M: int
    M_required: int
    idx: tuple = ()
    w: tuple = ()

    def summary(self) -> dict:
        return {
            "F": self.F, "T": self.T, "alpha_tgt": self.alpha_tgt, "alpha_lb": self.alpha_lb,
            "p_match": self.p_match, "mu_nat_p": self.mu_nat_p, "sigma_nat_p": self.sigma_nat_p,
            "MI_tgt": self.mi_tgt, "MI_LB": self.mi_lb, "M": self.M,
        }


def predicted_null(F: int, T: int) -> tuple[float, float, float]:
    """Binomial null for matching indices among T random sign vectors."""
    if T < 1 or F < 1:
        raise ValueError("need F >= 1 and T >= 1")
    p = 2.0 * 0.5 ** T
    return p, F * p, math.sqrt(F * p * (1.0 - p))


def target_MI(F: int, T: int, alpha_tgt: float) -> float:
    _, mu, sigma = predicted_null(F, T)
    return min(mu + sigma * normal_quantile(alpha_tgt), float(F))


def lower_bound_MI(F: int, T: int, alpha_lb: float) -> float:
    _, mu, sigma = predicted_null(F, T)
    return max(mu - sigma * normal_quantile(alpha_lb), 0.0)


def watermark_length(F: int, T: int, alpha_tgt: float = 1e-5, alpha_lb: float = 1e-5) -> int:
    return design_watermark(F, T, alpha_tgt, alpha_lb).M


def design_watermark(F: int, T: int, alpha_tgt: float = 1e-5, alpha_lb: float = 1e-5) -> WatermarkDesign:
    p, mu, sigma = predicted_null(F, T)
    z_tgt, z_lb = normal_quantile(alpha_tgt), normal_quantile(alpha_lb)
    mi_tgt = min(mu + sigma * z_tgt, float(F))
    mi_lb = max(mu - sigma * z_lb, 0.0)
    if mi_tgt >= F:
        raise DesignInfeasibleError(
            f"target MI {mi_tgt:.3f} reaches F={F}; no watermark length can exceed natural matches "
            f"(sigma_nat_p={sigma:.4g})"
        )
    m_req = math.ceil((mi_tgt - mi_lb) * F / (F - mi_tgt))
    M = min(m_req, F)
    if M < 1:
        warnings.warn("degenerate design: MI_tgt == MI_LB, using M = 1", stacklevel=2)
        M = 1
    return WatermarkDesign(F, T, alpha_tgt, alpha_lb, p, mu, sigma, z_tgt, z_lb, mi_tgt, mi_lb, M, m_req)


def select_idx(subgraphs: SubgraphSet, X: np.ndarray, M: int) -> np.ndarray:
    """Indices of the M most frequently nonzero feature columns (ties: lowest index)."""
    X = np.asarray(X)
    if M > X.shape[1]:
        raise ValueError("M exceeds the number of features")
    counts = np.count_nonzero(X[subgraphs.all_nodes()], axis=0)
    if np.count_nonzero(counts) < M:
        raise ValueError(
            f"only {np.count_nonzero(counts)} feature columns are nonzero on the watermarked nodes; need {M}"
        )
    order = np.argsort(-counts, kind="stable")
    return order[:M]


def generate_w(rng: Rng, M: int) -> np.ndarray:
    if M < 1:
        raise ValueError("M must be positive")
    return np.where(rng.integers(0, 2, size=M) == 1, 1, -1).astype(np.int64)


def watermark_loss(explanations, w, idx, eps: float) -> float:
    w = np.asarray(w, dtype=np.float64)
    idx = np.asarray(idx, dtype=np.int64)
    if w.shape != idx.shape:
        raise ValueError("w and idx must have the same length")
    total = 0.0
    for e in explanations:
        e = np.asarray(e, dtype=np.float64)
        if idx.size and (idx.min() < 0 or idx.max() >= e.size):
            raise IndexError("watermark index out of range")
        total += float(np.sum(np.maximum(0.0, eps - w * e[idx])))
    return total


def hinge_op(e: ad.Tensor, w: np.ndarray, idx: np.ndarray, eps: float) -> ad.Tensor:
    margin = eps - w * e.value[idx]
    out = ad.Tensor(float(np.sum(np.maximum(0.0, margin))), (e,))

    def back(g):
        ge = np.zeros_like(e.value)
        np.add.at(ge, idx, np.where(margin > 0, -w, 0.0) * float(g))
        e._accum(ge)

    out._backward = back
    return out


def alignment(binarized, w, idx) -> float:
    """Mean percentage of watermarked positions whose sign equals w."""
    w = np.asarray(w)
    idx = np.asarray(idx, dtype=np.int64)
    if not len(binarized):
        raise ValueError("need at least one explanation")
    hits = [np.mean(np.asarray(b)[idx] == w) for b in binarized]
    return 100.0 * float(np.mean(hits))


@dataclass(frozen=True)
class ArchConfig:
    arch: str = "SAGE"
    layers: int = 3
    hidden: int = 256
    activation: str = "relu"


@dataclass(frozen=True)
class EmbedConfig:
    r: float = 50.0
    eps: float = 0.01
    lr: float = 1e-3
    epochs: int = 300
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.r < 0 or self.eps <= 0 or self.lr < 0 or self.epochs < 0:
            raise ValueError("need r >= 0, eps > 0, lr >= 0, epochs >= 0")


@dataclass(frozen=True)
class DesignConfig:
    T: int = 4
    s: float = 0.005
    alpha_tgt: float = 1e-5
    alpha_lb: float = 1e-5


@dataclass
class WatermarkSecret:
    design: WatermarkDesign
    subgraphs: SubgraphSet
    s: float
    seed: int
    model_hash: str = ""

    @property
    def idx(self) -> np.ndarray:
        return np.asarray(self.design.idx, dtype=np.int64)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.design.w, dtype=np.int64)


@dataclass
class EmbedResult:
    model: GnnModel
    secret: WatermarkSecret
    history: list = field(default_factory=list)
    clf_nodes: np.ndarray | None = None


class WatermarkObjective:
    """Watermark term of the training loss for a fixed secret.

    Holds the per-subgraph induced scopes and ridge projections, which only
    depend on node features and therefore stay valid across epochs.
    """

    def __init__(self, g: Graph, subgraphs: SubgraphSet, w, idx, eps: float,
                 kernel: KernelConfig = KernelConfig()):
        self.scopes = [Scope(g, nodes) for nodes in subgraphs.node_sets]
        self.projectors = [RidgeProjector(sc.X, kernel) for sc in self.scopes]
        self.w = np.asarray(w, dtype=np.float64)
        self.idx = np.asarray(idx, dtype=np.int64)
        self.eps = eps
        self.kernel = kernel

    def terms(self, model: GnnModel, tensors: dict):
        """Hinge loss tensor and the current explanation values."""
        losses, explanations = [], []
        for sc, proj in zip(self.scopes, self.projectors):
            P = ad.softmax(logits_tape(model, tensors, sc))
            e = explanation_op(proj, P)
            explanations.append(e.value)
            losses.append(hinge_op(e, self.w, self.idx, self.eps))
        return ad.total(losses), explanations

    def explanations(self, model: GnnModel) -> list:
        tensors = {k: ad.const(v) for k, v in model.params.items()}
        return self.terms(model, tensors)[1]

    def alignment(self, model: GnnModel) -> float:
        bins = [binarize(e, self.kernel.zero_tol) for e in self.explanations(model)]
        return alignment(bins, self.w, self.idx)


def embed(
    g: Graph,
    split: SplitSpec,
    arch: ArchConfig,
    embed_cfg: EmbedConfig,
    design_cfg: DesignConfig,
    rng: Rng,
    kernel: KernelConfig = KernelConfig(),
    on_epoch=None,
) -> EmbedResult:
    """Train a node classifier whose subgraph explanations carry a watermark.

    The random streams are split by purpose (subgraphs, pattern, weights), so
    ``r = 0`` reproduces plain classification training for the same seed.
    """
    design = design_watermark(g.num_features, design_cfg.T, design_cfg.alpha_tgt, design_cfg.alpha_lb)
    subgraphs, clf_nodes = sample_subgraphs(rng.spawn(STREAM_SUBGRAPHS), split, design_cfg.T, design_cfg.s)
    idx = select_idx(subgraphs, g.features, design.M)
    w = generate_w(rng.spawn(STREAM_PATTERN), design.M)
    design = replace(design, idx=tuple(int(i) for i in idx), w=tuple(int(v) for v in w))

    model = init_model(arch.arch, g.num_features, g.num_classes, rng.spawn(STREAM_MODEL),
                       arch.layers, arch.hidden, arch.activation)
    objective = WatermarkObjective(g, subgraphs, w, idx, embed_cfg.eps, kernel)

    def extra(tensors):
        l_wmk, es = objective.terms(model_ref[0], tensors)
        bins = [binarize(e, kernel.zero_tol) for e in es]
        info = {"loss_wmk": float(l_wmk.value), "alignment": alignment(bins, w, idx)}
        if embed_cfg.r == 0:
            return None, info
        return ad.scale(l_wmk, embed_cfg.r), info

    # the objective only reads architecture metadata, which training never changes
    model_ref = [model]
    trained, history = fit(model, g, clf_nodes, embed_cfg.epochs, embed_cfg.lr,
                           embed_cfg.optimizer, extra_loss=extra, on_epoch=on_epoch)
    secret = WatermarkSecret(design, subgraphs, design_cfg.s, rng.seed, model_hash(trained))
    return EmbedResult(trained, secret, history, clf_nodes)


def dumps_secret(secret: WatermarkSecret) -> str:
    d = secret.design
    lines = [
        SECRET_MAGIC,
        f"T {secret.subgraphs.T}",
        f"s {secret.s!r}",
        f"n_sub {secret.subgraphs.n_sub}",
        f"seed {secret.seed}",
        f"model_hash {secret.model_hash}",
        "idx " + " ".join(str(i) for i in d.idx),
        "w " + " ".join(str(v) for v in d.w),
    ]
    for i, nodes in enumerate(secret.subgraphs.node_sets):
        lines.append(f"subgraph {i} " + " ".join(str(int(v)) for v in nodes))
    lines += [
        f"rng {RNG_ALGORITHM}",
        f"F {d.F}",
        f"alpha_tgt {d.alpha_tgt!r}",
        f"alpha_lb {d.alpha_lb!r}",
    ]
    return "\n".join(lines) + "\n"


def loads_secret(text: str) -> WatermarkSecret:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != SECRET_MAGIC:
        raise ValueError("not a GNNWM secret file")
    kv: dict = {}
    sets = []
    for ln in lines[1:]:
        key, _, rest = ln.partition(" ")
        if key == "subgraph":
            toks = rest.split()
            sets.append(np.array([int(t) for t in toks[1:]], dtype=np.int64))
        else:
            kv[key] = rest.strip()
    if kv.get("rng", RNG_ALGORITHM) != RNG_ALGORITHM:
        raise ValueError(f"secret was written with generator {kv['rng']!r}, this build uses {RNG_ALGORITHM!r}")
    T = int(kv["T"])
    if len(sets) != T:
        raise ValueError("secret subgraph count does not match T")
    design = design_watermark(int(kv["F"]), T, float(kv["alpha_tgt"]), float(kv["alpha_lb"]))
    design = replace(
        design,
        idx=tuple(int(t) for t in kv["idx"].split()),
        w=tuple(int(t) for t in kv["w"].split()),
    )
    sub = SubgraphSet(tuple(sets))
    if sub.n_sub != int(kv["n_sub"]):
        raise ValueError("secret n_sub does not match stored subgraphs")
    return WatermarkSecret(design, sub, float(kv["s"]), int(kv["seed"]), kv["model_hash"])


def save_secret(secret: WatermarkSecret, path) -> None:
    path = Path(path)
    path.write_text(dumps_secret(secret), encoding="utf-8")
    os.chmod(path, 0o600)


def load_secret(path) -> WatermarkSecret:
    return loads_secret(Path(path).read_text(encoding="utf-8"))
