"""Seeded trial pipeline and the small file formats it needs."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .graph import Graph, SplitSpec, split_nodes
from .models import Scope, accuracy
from .numeric import Rng, derive_seed
from .verification import NullMIStats, VerificationReport, binarized_explanation, build_null, verify
from .watermark import STREAM_NULL, STREAM_SPLIT, EmbedResult, alignment, embed

SPLIT_MAGIC = "GNNWM-SPLIT v1"
CANDIDATES_MAGIC = "GNNWM-CANDIDATES v1"
TRIAL_STREAM_BASE = 16


def dumps_split(split: SplitSpec) -> str:
    lines = [SPLIT_MAGIC]
    for name in ("train", "test", "val"):
        lines.append(name + " " + " ".join(str(int(v)) for v in getattr(split, name)))
    return "\n".join(lines) + "\n"


def loads_split(text: str) -> SplitSpec:
    lines = text.splitlines()
    if not lines or lines[0].strip() != SPLIT_MAGIC:
        raise ValueError("not a GNNWM split file")
    parts = {}
    for ln in lines[1:]:
        if ln.strip():
            key, _, rest = ln.partition(" ")
            parts[key] = np.array([int(t) for t in rest.split()], dtype=np.int64)
    return SplitSpec(parts["train"], parts["test"], parts["val"])


def dumps_candidates(node_sets) -> str:
    lines = [CANDIDATES_MAGIC]
    lines += [f"subgraph {i} " + " ".join(str(int(v)) for v in s) for i, s in enumerate(node_sets)]
    return "\n".join(lines) + "\n"


def loads_candidates(text: str) -> list:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != CANDIDATES_MAGIC:
        raise ValueError("not a GNNWM candidates file")
    out = []
    for ln in lines[1:]:
        toks = ln.split()
        if toks[0] != "subgraph":
            raise ValueError(f"unexpected line in candidates file: {ln[:40]!r}")
        out.append(np.array([int(t) for t in toks[2:]], dtype=np.int64))
    return out


class ArtifactWriter:
    """Writes files via temp-file + rename and can roll back everything it wrote."""

    def __init__(self, root):
        self.root = Path(root)
        self.written: list[Path] = []

    def write_text(self, rel, text: str, mode: int | None = None) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.name)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            if mode is not None:
                os.chmod(tmp, mode)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        self.written.append(path)
        return path

    def rollback(self) -> None:
        for p in reversed(self.written):
            p.unlink(missing_ok=True)
        self.written.clear()


def trial_seed(master: int, trial: int) -> int:
    return derive_seed(master, TRIAL_STREAM_BASE + trial)


@dataclass
class TrialResult:
    trial: int
    seed: int
    split: SplitSpec
    result: EmbedResult
    null: NullMIStats
    report: VerificationReport
    train_acc: float
    test_acc: float
    alignment: float
    label: str = "wm"

    def summary_row(self) -> dict:
        nan = float("nan")
        return {
            "trial": self.trial, "variant": self.label, "train_acc": self.train_acc,
            "test_acc": self.test_acc, "alignment": self.alignment,
            "MI": self.report.MI_cdt if self.report else nan,
            "p_value": self.report.p_value if self.report else nan,
        }


def run_trial(cfg: ExperimentConfig, g: Graph, seed: int, trial: int = 0, r: float | None = None,
              on_epoch=None, with_null: bool = True) -> TrialResult:
    """Split, embed, build the deployed null and verify the true subgraphs."""
    rng = Rng(seed)
    split = split_nodes(rng.spawn(STREAM_SPLIT), g, cfg.fractions())
    kernel = cfg.kernel()
    res = embed(g, split, cfg.arch(), cfg.embed_cfg(r), cfg.design_cfg(), rng, kernel, on_epoch)
    scope = Scope(g)
    tr = accuracy(res.model, g, split.train, scope)
    te = accuracy(res.model, g, split.test, scope)
    secret = res.secret
    bins = [binarized_explanation(res.model, g, nodes, kernel) for nodes in secret.subgraphs.node_sets]
    align = alignment(bins, secret.w, secret.idx)
    null = report = None
    if with_null:
        null = build_null(res.model, g, split, cfg["watermark.T"], cfg["watermark.s"], cfg["verify.D"],
                          cfg["verify.I"], rng.spawn(STREAM_NULL), kernel, res.secret.subgraphs.n_sub)
        report = verify(res.model, g, res.secret.subgraphs.node_sets, null, cfg["verify.alpha_v"], kernel)
    label = "control" if (r == 0 or (r is None and cfg["watermark.r"] == 0)) else "wm"
    return TrialResult(trial, seed, split, res, null, report, tr, te, align, label)
