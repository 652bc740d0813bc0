"""Watermark removal attacks: structured pruning and fine-tuning."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .explain import KernelConfig, binarize
from .graph import Graph, SplitSpec
from .models import GnnModel, Scope, accuracy, fit
from .verification import NullMIStats, count_MI, z_test
from .watermark import WatermarkObjective, WatermarkSecret, alignment

REPORT_COLUMNS = ("strength", "train_acc", "test_acc", "p_value", "alignment")


def _bias_for(name: str) -> str | None:
    if name.startswith("Ws"):
        return "b" + name[2:]
    if name.startswith("W") and name[1:].isdigit():
        return "b" + name[1:]
    return None


def prune(model: GnnModel, rate: float, norm_order: float = 2) -> GnnModel:
    """Zero the ``floor(rate * rows)`` lowest-norm output rows of every weight matrix.

    The bias entries of a pruned output unit are zeroed with the primary
    (self) weight matrix of its layer.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("pruning rate must lie in [0, 1]")
    pruned = model.copy()
    for name, W in model.params.items():
        if W.ndim != 2:
            continue
        k = int(np.floor(rate * W.shape[0] + 1e-12))
        if k == 0:
            continue
        norms = np.linalg.norm(W, ord=norm_order, axis=1)
        rows = np.argsort(norms, kind="stable")[:k]
        W2 = W.copy()
        W2[rows] = 0.0
        pruned.params[name] = W2
        b = _bias_for(name)
        if b is not None and b in pruned.params:
            bb = pruned.params[b].copy()
            bb[rows] = 0.0
            pruned.params[b] = bb
    return pruned


class WatermarkProbe:
    """Accuracy and ownership statistics of a (possibly attacked) model.

    Uses the deployed null throughout; re-simulating it per point would model
    a different verifier.
    """

    def __init__(self, g: Graph, split: SplitSpec, secret: WatermarkSecret, null: NullMIStats,
                 kernel: KernelConfig = KernelConfig()):
        self.g, self.split, self.secret, self.null, self.kernel = g, split, secret, null, kernel
        self.scope = Scope(g)
        self.objective = WatermarkObjective(g, secret.subgraphs, secret.w, secret.idx, 0.01, kernel)

    def __call__(self, model: GnnModel) -> dict:
        bins = [binarize(e, self.kernel.zero_tol) for e in self.objective.explanations(model)]
        mi = count_MI(bins)
        _, p, _ = z_test(mi, self.null, 0.5)
        return {
            "train_acc": accuracy(model, self.g, self.split.train, self.scope),
            "test_acc": accuracy(model, self.g, self.split.test, self.scope),
            "p_value": p,
            "alignment": alignment(bins, self.secret.w, self.secret.idx),
            "MI": mi,
        }


def finetune(model: GnnModel, g: Graph, val_nodes, epochs: int, lr: float, lr_scale: float = 0.1,
             probe: WatermarkProbe | None = None, optimizer: str = "sgd") -> tuple[GnnModel, list]:
    """Classification-only training on ``val_nodes`` at ``lr * lr_scale``."""
    val_nodes = np.asarray(val_nodes, dtype=np.int64)
    if val_nodes.size == 0:
        raise ValueError("fine-tuning node set is empty")
    trace: list = []

    def record(epoch, row, m):
        point = {"strength": epoch, "loss": row["loss"]}
        if probe is not None:
            point.update(probe(m))
        trace.append(point)

    tuned, _ = fit(model, g, val_nodes, epochs, lr * lr_scale, optimizer, on_epoch=record)
    return tuned, trace


@dataclass
class AttackReport:
    kind: str
    rows: list = field(default_factory=list)

    def __post_init__(self):
        grid = [r["strength"] for r in self.rows]
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("attack grid must be strictly increasing")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in self.rows:
            strength = int(r["strength"]) if self.kind == "finetune" else repr(float(r["strength"]))
            writer.writerow([strength] + [repr(float(r[c])) for c in REPORT_COLUMNS[1:]])
        return buf.getvalue()

    def plot_data(self) -> dict:
        """One two-column TSV per curve, keyed by curve name."""
        out = {}
        for col in REPORT_COLUMNS[1:]:
            lines = [f"strength\t{col}"]
            lines += [f"{r['strength']!r}\t{float(r[col])!r}" for r in self.rows]
            out[col] = "\n".join(lines) + "\n"
        return out

    def write(self, out_dir, stem: str | None = None) -> list:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or f"attack_{self.kind}"
        paths = [out_dir / f"{stem}.csv"]
        paths[0].write_text(self.to_csv(), encoding="utf-8")
        for col, text in self.plot_data().items():
            p = out_dir / f"{stem}_{col}.tsv"
            p.write_text(text, encoding="utf-8")
            paths.append(p)
        return paths


def robustness_sweep(model: GnnModel, g: Graph, split: SplitSpec, secret: WatermarkSecret,
                     null: NullMIStats, kind: str, grid=None, lr: float = 1e-3, lr_scale: float = 0.1,
                     norm_order: float = 2, kernel: KernelConfig = KernelConfig(),
                     optimizer: str = "sgd") -> AttackReport:
    """Attack a copy of ``model`` at every grid point and probe the watermark.

    ``kind='prune'``: grid of pruning rates (default 0.0, 0.1, ..., 1.0).
    ``kind='finetune'``: grid of epoch counts (default 1..49); one continuous
    run is probed after each epoch, equivalent to separate runs because
    full-batch training is deterministic.
    """
    probe = WatermarkProbe(g, split, secret, null, kernel)
    if kind == "prune":
        grid = list(np.round(np.linspace(0.0, 1.0, 11), 10)) if grid is None else list(grid)
        rows = []
        for rate in grid:
            row = {"strength": float(rate)}
            row.update(probe(prune(model, float(rate), norm_order)))
            rows.append(row)
        return AttackReport("prune", rows)
    if kind == "finetune":
        grid = list(range(1, 50)) if grid is None else [int(e) for e in grid]
        if not grid:
            return AttackReport("finetune", [])
        _, trace = finetune(model, g, split.val, max(grid), lr, lr_scale, probe, optimizer)
        wanted = set(grid)
        return AttackReport("finetune", [r for r in trace if r["strength"] in wanted])
    raise ValueError(f"unknown attack kind {kind!r}")
