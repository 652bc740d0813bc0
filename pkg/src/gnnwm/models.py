"""GCN, SGC and GraphSAGE node classifiers with full-batch training."""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graph import Graph
from .numeric import Rng

ARCHITECTURES = ("GCN", "SGC", "SAGE")
ACTIVATIONS = {"relu": ad.relu, "identity": ad.identity}
MODEL_MAGIC = "GNNWM-MODEL v1"


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class GnnModel:
    arch: str
    dims: list
    layers: int
    activation: str = "relu"
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.layers < 1:
            raise ValueError("need at least one layer")

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def copy(self) -> "GnnModel":
        return copy.deepcopy(self)

    def param_names(self) -> list:
        return list(self.params)


def init_model(
    arch: str,
    in_dim: int,
    num_classes: int,
    rng: Rng,
    layers: int = 3,
    hidden: int = 256,
    activation: str = "relu",
) -> GnnModel:
    """Glorot-uniform weights (output-major), zero biases."""
    if arch == "SGC":
        dims = [in_dim, num_classes]
    else:
        dims = [in_dim] + [hidden] * (layers - 1) + [num_classes]
    model = GnnModel(arch, dims, layers, activation, rng.seed)

    def glorot(out_d, in_d):
        lim = np.sqrt(6.0 / (in_d + out_d))
        return rng.uniform(-lim, lim, (out_d, in_d))

    for l in range(len(dims) - 1):
        d_in, d_out = dims[l], dims[l + 1]
        if arch == "SAGE":
            model.params[f"Ws{l}"] = glorot(d_out, d_in)
            model.params[f"Wn{l}"] = glorot(d_out, d_in)
        else:
            model.params[f"W{l}"] = glorot(d_out, d_in)
        model.params[f"b{l}"] = np.zeros(d_out)
    return model


def gcn_normalized(A: sp.spmatrix) -> sp.csr_matrix:
    """D^{-1/2} (A + I) D^{-1/2}."""
    n = A.shape[0]
    At = (A + sp.identity(n, format="csr")).tocsr()
    d = np.asarray(At.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(d)
    return (sp.diags(dinv) @ At @ sp.diags(dinv)).tocsr()


def mean_aggregator(A: sp.spmatrix) -> sp.csr_matrix:
    """Row-normalized adjacency without self loops; isolated rows stay zero."""
    d = np.asarray(A.sum(axis=1)).ravel()
    inv = np.divide(1.0, d, out=np.zeros_like(d), where=d > 0)
    return (sp.diags(inv) @ A).tocsr()


class Scope:
    """Propagation operators and features for a forward pass.

    ``nodes=None`` is the full graph; otherwise the subgraph induced by
    ``nodes`` (only edges with both endpoints inside the set).
    """

    def __init__(self, g: Graph, nodes=None):
        if nodes is None:
            self.nodes = None
            A = g.adjacency
            self.X = g.features
        else:
            self.nodes = np.asarray(nodes, dtype=np.int64)
            if self.nodes.size == 0:
                raise ValueError("empty node set")
            if self.nodes.min() < 0 or self.nodes.max() >= g.num_nodes:
                raise ValueError("node id outside graph")
            A = g.induced_adjacency(self.nodes)
            self.X = g.features[self.nodes]
        self.A = A
        self._gcn = None
        self._mean = None
        self._sgc: dict = {}

    @property
    def gcn(self):
        if self._gcn is None:
            self._gcn = gcn_normalized(self.A)
        return self._gcn

    @property
    def mean(self):
        if self._mean is None:
            self._mean = mean_aggregator(self.A)
        return self._mean

    def sgc_features(self, hops: int) -> np.ndarray:
        if hops not in self._sgc:
            Z = self.X
            for _ in range(hops):
                Z = self.gcn @ Z
            self._sgc[hops] = np.asarray(Z)
        return self._sgc[hops]


def logits_tape(model: GnnModel, tensors: dict, scope: Scope) -> ad.Tensor:
    if scope.X.shape[1] != model.in_dim:
        raise ValueError(f"model expects {model.in_dim} features, graph has {scope.X.shape[1]}")
    act = ACTIVATIONS[model.activation]
    if model.arch == "SGC":
        h = ad.const(scope.sgc_features(model.layers))
        return ad.add(ad.matmul_t(h, tensors["W0"]), tensors["b0"])
    h = ad.const(scope.X)
    n_layers = len(model.dims) - 1
    for l in range(n_layers):
        if model.arch == "GCN":
            z = ad.spmm(scope.gcn, ad.matmul_t(h, tensors[f"W{l}"]))
        else:
            z = ad.add(
                ad.matmul_t(h, tensors[f"Ws{l}"]),
                ad.matmul_t(ad.spmm(scope.mean, h), tensors[f"Wn{l}"]),
            )
        z = ad.add(z, tensors[f"b{l}"])
        h = act(z) if l < n_layers - 1 else z
    return h


def as_tensors(model: GnnModel) -> dict:
    return {k: ad.param(v) for k, v in model.params.items()}


def forward(model: GnnModel, g: Graph, nodes, scope: str = "full") -> np.ndarray:
    """Softmax class probabilities for ``nodes`` (rows follow ``nodes`` order)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("empty node set")
    if scope == "full":
        sc = Scope(g)
        z = logits_tape(model, {k: ad.const(v) for k, v in model.params.items()}, sc).value[nodes]
    elif scope == "induced":
        sc = Scope(g, nodes)
        z = logits_tape(model, {k: ad.const(v) for k, v in model.params.items()}, sc).value
    else:
        raise ValueError(f"unknown scope {scope!r}")
    return _softmax(z)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def ce_loss(P: np.ndarray, y) -> float:
    """Summed negative log-likelihood of the true classes."""
    P = np.asarray(P, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if P.shape[0] != y.shape[0]:
        raise ValueError("label count does not match prediction rows")
    if y.size and (y.min() < 0 or y.max() >= P.shape[1]):
        raise ValueError("label out of range")
    return float(-np.sum(np.log(P[np.arange(len(y)), y])))


def accuracy(model: GnnModel, g: Graph, nodes, scope: Scope | None = None) -> float:
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        return float("nan")
    sc = scope or Scope(g)
    z = logits_tape(model, {k: ad.const(v) for k, v in model.params.items()}, sc).value
    return float(np.mean(z[nodes].argmax(axis=1) == g.labels[nodes]))


class Optimizer:
    """Plain gradient descent, or Adam behind ``kind='adam'``."""

    def __init__(self, kind: str = "sgd", lr: float = 1e-3, betas=(0.9, 0.999), eps=1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind, self.lr, self.betas, self.eps = kind, lr, betas, eps
        self._m: dict = {}
        self._v: dict = {}
        self._t = 0

    def step(self, params: dict, grads: dict) -> None:
        if self.kind == "sgd":
            for k, g in grads.items():
                params[k] = params[k] - self.lr * g
            return
        self._t += 1
        b1, b2 = self.betas
        for k, g in grads.items():
            m = self._m.get(k, 0.0) * b1 + (1 - b1) * g
            v = self._v.get(k, 0.0) * b2 + (1 - b2) * g * g
            self._m[k], self._v[k] = m, v
            mhat = m / (1 - b1 ** self._t)
            vhat = v / (1 - b2 ** self._t)
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


ExtraLoss = Callable[[dict], tuple]


def fit(
    model: GnnModel,
    g: Graph,
    clf_nodes,
    epochs: int,
    lr: float,
    optimizer: str = "sgd",
    extra_loss: ExtraLoss | None = None,
    on_epoch: Callable[[int, dict, GnnModel], None] | None = None,
) -> tuple[GnnModel, list]:
    """Full-batch training of summed cross-entropy on ``clf_nodes``.

    ``extra_loss(tensors)`` may return ``(term, info)``; ``term`` is added to
    the classification loss before the gradient step.
    """
    clf_nodes = np.asarray(clf_nodes, dtype=np.int64)
    if clf_nodes.size == 0:
        raise ValueError("classification node set is empty")
    model = model.copy()
    scope = Scope(g)
    opt = Optimizer(optimizer, lr)
    labels = g.labels[clf_nodes]
    history = []
    for epoch in range(1, epochs + 1):
        tensors = as_tensors(model)
        logits = logits_tape(model, tensors, scope)
        l_clf = ad.nll_from_logits(logits, clf_nodes, labels)
        info: dict = {}
        total = l_clf
        if extra_loss is not None:
            term, info = extra_loss(tensors)
            if term is not None:
                total = ad.total([l_clf, term])
        loss = float(total.value)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss became non-finite at epoch {epoch}")
        total.backward()
        grads = {k: t.grad if t.grad is not None else np.zeros_like(t.value) for k, t in tensors.items()}
        train_acc = float(np.mean(logits.value[clf_nodes].argmax(axis=1) == labels))
        opt.step(model.params, grads)
        if not all(np.all(np.isfinite(p)) for p in model.params.values()):
            raise TrainingDivergedError(f"weights became non-finite at epoch {epoch}")
        row = {"epoch": epoch, "loss": loss, "loss_clf": float(l_clf.value), "train_acc": train_acc}
        row.update(info)
        history.append(row)
        if on_epoch is not None:
            on_epoch(epoch, row, model)
    return model, history


def train_classifier(model: GnnModel, g: Graph, clf_nodes, epochs: int, lr: float,
                     optimizer: str = "sgd") -> tuple[GnnModel, list]:
    return fit(model, g, clf_nodes, epochs, lr, optimizer)


def dumps_model(model: GnnModel) -> str:
    dims = ",".join(str(d) for d in model.dims)
    lines = [
        MODEL_MAGIC,
        f"arch={model.arch} layers={model.layers} dims={dims} "
        f"activation={model.activation} seed={model.seed}",
    ]
    for name, arr in model.params.items():
        a = np.atleast_2d(arr) if arr.ndim == 2 else arr.reshape(1, -1)
        kind = "matrix" if arr.ndim == 2 else "vector"
        lines.append(f"param {name} {kind} {a.shape[0]} {a.shape[1]}")
        for row in a:
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> GnnModel:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MODEL_MAGIC:
        raise ValueError("not a GNNWM model checkpoint")
    meta = dict(tok.split("=", 1) for tok in lines[1].split())
    model = GnnModel(
        arch=meta["arch"],
        dims=[int(d) for d in meta["dims"].split(",")],
        layers=int(meta["layers"]),
        activation=meta["activation"],
        seed=int(meta["seed"]),
    )
    i = 2
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        _, name, kind, r, c = lines[i].split()
        r, c = int(r), int(c)
        rows = [[float(t) for t in lines[i + 1 + k].split()] for k in range(r)]
        arr = np.array(rows, dtype=np.float64).reshape(r, c)
        model.params[name] = arr if kind == "matrix" else arr.reshape(-1)
        i += 1 + r
    return model


def save_model(model: GnnModel, path) -> str:
    text = dumps_model(model)
    Path(path).write_text(text, encoding="utf-8")
    return sha256_text(text)


def load_model(path) -> GnnModel:
    return loads_model(Path(path).read_text(encoding="utf-8"))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def model_hash(model: GnnModel) -> str:
    return sha256_text(dumps_model(model))
