"""Graph data model, text file format, synthetic graphs, splits and subgraphs."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .numeric import Rng

GRAPH_MAGIC = "GNNWM-GRAPH v1"
_HEADER_RE = re.compile(
    r"^GNNWM-GRAPH v1 N=(\d+) F=(\d+) C=(\d+) E=(\d+)$"
)


class GraphFormatError(ValueError):
    """Malformed graph file or graph invariant violation."""


class MalformedHeaderError(GraphFormatError):
    pass


class DanglingEdgeError(GraphFormatError):
    pass


class LabelRangeError(GraphFormatError):
    pass


class NonFiniteFeatureError(GraphFormatError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected node-classification graph.

    ``edges`` holds each undirected edge once as ``(u, v)`` with ``u < v``;
    ``labels`` are 0-indexed class ids.
    """

    features: np.ndarray
    edges: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        E = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if X.ndim != 2 or X.shape[1] < 1:
            raise GraphFormatError("features must be an N x F matrix with F >= 1")
        N = X.shape[0]
        if y.shape != (N,):
            raise GraphFormatError("labels must have one entry per node")
        if not np.all(np.isfinite(X)):
            raise NonFiniteFeatureError("feature matrix contains NaN or Inf")
        if self.num_classes < 1 or (N and (y.min() < 0 or y.max() >= self.num_classes)):
            raise LabelRangeError(f"labels must lie in [0, {self.num_classes})")
        if E.size and (E.min() < 0 or E.max() >= N):
            raise DanglingEdgeError("edge endpoint outside [0, N)")
        E = _normalize_edges(E)
        X.setflags(write=False)
        y.setflags(write=False)
        E.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "edges", E)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        return _adjacency(self.edges, self.num_nodes)

    def induced_adjacency(self, nodes: np.ndarray) -> sp.csr_matrix:
        nodes = np.asarray(nodes, dtype=np.int64)
        return self.adjacency[nodes][:, nodes].tocsr()


def _normalize_edges(E: np.ndarray) -> np.ndarray:
    if E.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    u = np.minimum(E[:, 0], E[:, 1])
    v = np.maximum(E[:, 0], E[:, 1])
    keep = u != v
    pairs = np.stack([u[keep], v[keep]], axis=1)
    return np.unique(pairs, axis=0)


def _adjacency(edges: np.ndarray, n: int) -> sp.csr_matrix:
    if edges.size == 0:
        return sp.csr_matrix((n, n), dtype=np.float64)
    r = np.concatenate([edges[:, 0], edges[:, 1]])
    c = np.concatenate([edges[:, 1], edges[:, 0]])
    A = sp.coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n)).tocsr()
    A.data[:] = 1.0
    return A


def dumps_graph(g: Graph) -> str:
    lines = [
        f"{GRAPH_MAGIC} N={g.num_nodes} F={g.num_features} "
        f"C={g.num_classes} E={g.num_edges}"
    ]
    for label, row in zip(g.labels, g.features):
        lines.append(" ".join([str(int(label))] + [repr(float(v)) for v in row]))
    for u, v in g.edges:
        lines.append(f"{int(u)} {int(v)}")
    return "\n".join(lines) + "\n"


def save_graph(g: Graph, path) -> None:
    Path(path).write_text(dumps_graph(g), encoding="utf-8")


def load_graph(path) -> Graph:
    with open(path, encoding="utf-8") as fh:
        return loads_graph(fh.read(), str(path))


def loads_graph(text: str, path: str = "<graph>") -> Graph:
    lines = text.splitlines()
    if not lines:
        raise MalformedHeaderError(f"{path}: empty file")
    m = _HEADER_RE.match(lines[0].strip())
    if m is None:
        raise MalformedHeaderError(f"{path}: bad header {lines[0][:80]!r}")
    N, F, C, E = (int(t) for t in m.groups())
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != N + E:
        raise MalformedHeaderError(
            f"{path}: header declares {N} nodes + {E} edges, found {len(body)} lines"
        )
    X = np.empty((N, F), dtype=np.float64)
    y = np.empty(N, dtype=np.int64)
    for i, ln in enumerate(body[:N]):
        toks = ln.split()
        if len(toks) != F + 1:
            raise MalformedHeaderError(f"{path}: node line {i} has {len(toks) - 1} features, expected {F}")
        y[i] = int(toks[0])
        X[i] = [float(t) for t in toks[1:]]
        if not np.all(np.isfinite(X[i])):
            raise NonFiniteFeatureError(f"{path}: non-finite feature on node {i}")
        if not 0 <= y[i] < C:
            raise LabelRangeError(f"{path}: node {i} label {y[i]} outside [0, {C})")
    edges = np.empty((E, 2), dtype=np.int64)
    for k, ln in enumerate(body[N:]):
        toks = ln.split()
        if len(toks) != 2:
            raise MalformedHeaderError(f"{path}: edge line {k} malformed")
        u, v = int(toks[0]), int(toks[1])
        if not (0 <= u < N and 0 <= v < N):
            raise DanglingEdgeError(f"{path}: edge ({u}, {v}) references a node outside [0, {N})")
        edges[k] = (u, v)
    return Graph(X, edges, y, C)


def synth_graph(
    rng: Rng,
    N: int = 600,
    F: int = 100,
    C: int = 4,
    p_intra: float = 0.05,
    p_inter: float = 0.005,
    feature_sparsity: float = 0.7,
    signal_boost: float = 1.0,
) -> Graph:
    """Planted-partition graph with class-conditioned sparse features.

    Nodes are assigned to classes round-robin.  Every feature is nonzero with
    probability ``1 - feature_sparsity`` and exponentially distributed; each
    feature is owned by one class, and members of that class get an extra
    ``signal_boost``-scaled exponential draw on it.
    """
    if C < 2:
        raise ValueError("need at least two classes")
    if N < 4 * C:
        raise ValueError(f"N={N} is too small for C={C} classes (need N >= 4C)")
    if not 0.0 <= p_inter <= p_intra <= 1.0:
        raise ValueError("need 0 <= p_inter <= p_intra <= 1")
    if not 0.0 <= feature_sparsity <= 1.0:
        raise ValueError("feature_sparsity must be a probability")

    labels = np.arange(N) % C
    iu, ju = np.triu_indices(N, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, p_intra, p_inter)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    density = 1.0 - feature_sparsity
    base = rng.exponential(1.0, (N, F)) * (rng.random((N, F)) < density)
    owner = np.arange(F) % C
    member = owner[None, :] == labels[:, None]
    boost = signal_boost * rng.exponential(1.0, (N, F)) * (rng.random((N, F)) < max(density, 0.5))
    X = base + member * boost
    if not np.any(X):
        raise ValueError("degenerate synthetic graph: all features are zero")
    return Graph(X, edges, labels, C)


@dataclass(frozen=True)
class SplitSpec:
    train: np.ndarray
    test: np.ndarray
    val: np.ndarray

    def __post_init__(self):
        sets = [set(map(int, a)) for a in (self.train, self.test, self.val)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("split sets must be pairwise disjoint")


def split_nodes(rng: Rng, g: Graph, fractions=(0.6, 0.2, 0.2)) -> SplitSpec:
    """Uniform random split; test/val get rounded sizes, train the remainder."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0):
        raise ValueError("fractions must be three non-negative numbers")
    if abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    N = g.num_nodes
    n_test = int(round(fr[1] * N))
    n_val = int(round(fr[2] * N))
    perm = rng.permutation(N)
    test = np.sort(perm[:n_test])
    val = np.sort(perm[n_test:n_test + n_val])
    train = np.sort(perm[n_test + n_val:])
    return SplitSpec(train, test, val)


def subgraph_size(s: float, n_train: int) -> int:
    if not 0.0 < s <= 1.0:
        raise ValueError("s must lie in (0, 1]")
    # guard against float noise such as 0.005 * 4600 = 23.000000000000004
    return max(1, math.ceil(round(s * n_train, 9)))


@dataclass(frozen=True)
class SubgraphSet:
    node_sets: tuple

    @property
    def T(self) -> int:
        return len(self.node_sets)

    @property
    def n_sub(self) -> int:
        return len(self.node_sets[0]) if self.node_sets else 0

    def all_nodes(self) -> np.ndarray:
        return np.concatenate(self.node_sets) if self.node_sets else np.zeros(0, np.int64)


def sample_subgraphs(rng: Rng, split: SplitSpec, T: int, s: float) -> tuple[SubgraphSet, np.ndarray]:
    """T disjoint node sets of ``ceil(s |V_tr|)`` training nodes, plus the rest."""
    if T < 1:
        raise ValueError("T must be positive")
    n_train = len(split.train)
    n_sub = subgraph_size(s, n_train)
    if T * n_sub > n_train:
        raise ValueError(
            f"cannot draw {T} disjoint subgraphs of {n_sub} nodes from {n_train} training nodes"
        )
    chosen = rng.choice(split.train, size=T * n_sub, replace=False)
    sets = tuple(np.sort(chosen[i * n_sub:(i + 1) * n_sub]) for i in range(T))
    clf = np.setdiff1d(split.train, chosen)
    return SubgraphSet(sets), clf


def random_subgraphs(rng: Rng, pool: np.ndarray, count: int, n_sub: int) -> list[np.ndarray]:
    """``count`` independent n_sub-node sets from ``pool`` (each without replacement)."""
    return [np.sort(rng.choice(pool, size=n_sub, replace=False)) for _ in range(count)]
