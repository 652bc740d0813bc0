"""Strict flat-JSON experiment configuration and run manifests."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .explain import KernelConfig
from .graph import Graph, load_graph, synth_graph
from .models import ARCHITECTURES
from .numeric import Rng
from .watermark import ArchConfig, DesignConfig, EmbedConfig

DEFAULTS: dict = {
    "dataset.path": None,
    "dataset.synth.seed": 1,
    "dataset.synth.N": 600,
    "dataset.synth.F": 100,
    "dataset.synth.C": 4,
    "dataset.synth.p_intra": 0.05,
    "dataset.synth.p_inter": 0.005,
    "dataset.synth.feature_sparsity": 0.7,
    "split.train": 0.6,
    "split.test": 0.2,
    "split.val": 0.2,
    "model.arch": "SAGE",
    "model.layers": 3,
    "model.hidden": 256,
    "model.activation": "relu",
    "watermark.T": 4,
    "watermark.s": 0.01,
    "watermark.alpha_tgt": 1e-5,
    "watermark.alpha_lb": 1e-5,
    "watermark.r": 50.0,
    "watermark.eps": 0.01,
    "watermark.F": None,
    "train.lr": 1e-3,
    "train.epochs": 300,
    "train.optimizer": "sgd",
    "explain.lambda": 1e-2,
    "explain.sigma_x": None,
    "explain.sigma_p": None,
    "verify.alpha_v": 0.01,
    "verify.D": 200,
    "verify.I": 1000,
    "attack.prune_grid": [round(0.1 * k, 1) for k in range(11)],
    "attack.norm_order": 2,
    "attack.finetune_epochs": 49,
    "attack.lr_scale": 0.1,
    "analyze.N_train": 4590,
    "analyze.T": 4,
    "analyze.s": 0.005,
    "analyze.s_grid": [0.001, 0.002, 0.003, 0.004, 0.005, 0.006, 0.007, 0.008, 0.009, 0.01],
    "analyze.j_values": [1, 2, 3, 4, 5, "all"],
    "analyze.mc_trials": 0,
    "seed": 0,
    "trials": 5,
}


class ConfigError(ValueError):
    pass


def _prob(v):
    return isinstance(v, (int, float)) and 0.0 < v < 1.0


def _nonneg(v):
    return isinstance(v, (int, float)) and v >= 0


def _pos_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1


_CHECKS = {
    "dataset.synth.N": _pos_int,
    "dataset.synth.F": _pos_int,
    "dataset.synth.C": lambda v: _pos_int(v) and v >= 2,
    "dataset.synth.p_intra": lambda v: isinstance(v, (int, float)) and 0 <= v <= 1,
    "dataset.synth.p_inter": lambda v: isinstance(v, (int, float)) and 0 <= v <= 1,
    "dataset.synth.feature_sparsity": lambda v: isinstance(v, (int, float)) and 0 <= v <= 1,
    "split.train": _nonneg,
    "split.test": _nonneg,
    "split.val": _nonneg,
    "model.arch": lambda v: v in ARCHITECTURES,
    "model.layers": _pos_int,
    "model.hidden": _pos_int,
    "model.activation": lambda v: v in ("relu", "identity"),
    "watermark.T": _pos_int,
    "watermark.s": lambda v: isinstance(v, (int, float)) and 0 < v <= 1,
    "watermark.alpha_tgt": _prob,
    "watermark.alpha_lb": _prob,
    "watermark.r": _nonneg,
    "watermark.eps": lambda v: isinstance(v, (int, float)) and v > 0,
    "watermark.F": lambda v: v is None or _pos_int(v),
    "train.lr": _nonneg,
    "train.epochs": lambda v: isinstance(v, int) and v >= 0,
    "train.optimizer": lambda v: v in ("sgd", "adam"),
    "explain.lambda": _nonneg,
    "explain.sigma_x": lambda v: v is None or (isinstance(v, (int, float)) and v > 0),
    "explain.sigma_p": lambda v: v is None or (isinstance(v, (int, float)) and v > 0),
    "verify.alpha_v": _prob,
    "verify.D": _pos_int,
    "verify.I": _pos_int,
    "attack.norm_order": lambda v: isinstance(v, (int, float)) and v >= 1,
    "attack.finetune_epochs": lambda v: isinstance(v, int) and v >= 0,
    "attack.lr_scale": _nonneg,
    "analyze.N_train": _pos_int,
    "analyze.T": _pos_int,
    "analyze.s": lambda v: isinstance(v, (int, float)) and 0 < v <= 1,
    "analyze.mc_trials": lambda v: isinstance(v, int) and (v == 0 or v >= 10**4),
    "seed": lambda v: isinstance(v, int) and 0 <= v < 2**64,
    "trials": _pos_int,
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = sorted(set(data) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = dict(DEFAULTS)
        values.update(data)
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def with_overrides(self, **kv) -> "ExperimentConfig":
        values = dict(self.values)
        values.update({k.replace("__", "."): v for k, v in kv.items()})
        return ExperimentConfig.from_dict(values)

    def validate(self) -> None:
        v = self.values
        for key, check in _CHECKS.items():
            if not check(v[key]):
                raise ConfigError(f"invalid value for {key}: {v[key]!r}")
        fr = (v["split.train"], v["split.test"], v["split.val"])
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        if v["dataset.synth.p_inter"] > v["dataset.synth.p_intra"]:
            raise ConfigError("dataset.synth.p_inter must not exceed p_intra")
        if v["dataset.path"] is None and v["dataset.synth.N"] < 4 * v["dataset.synth.C"]:
            raise ConfigError("dataset.synth.N must be at least 4 * C")
        if v["dataset.path"] is None:
            n_train = v["dataset.synth.N"] - round(v["split.test"] * v["dataset.synth.N"]) \
                - round(v["split.val"] * v["dataset.synth.N"])
            from .graph import subgraph_size
            if v["watermark.T"] * subgraph_size(v["watermark.s"], max(n_train, 1)) > n_train:
                raise ConfigError("watermark.T * n_sub exceeds the training node count")
        if v["verify.D"] < v["watermark.T"]:
            raise ConfigError("verify.D must be at least watermark.T")
        if v["explain.lambda"] == 0:
            raise ConfigError("explain.lambda = 0 leaves the ridge system singular on constant features")
        grid = v["attack.prune_grid"]
        if not (isinstance(grid, list) and grid and all(isinstance(x, (int, float)) and 0 <= x <= 1 for x in grid)
                and all(b > a for a, b in zip(grid, grid[1:]))):
            raise ConfigError("attack.prune_grid must be a strictly increasing list in [0, 1]")
        sg = v["analyze.s_grid"]
        if not (isinstance(sg, list) and sg and all(isinstance(x, (int, float)) and 0 < x <= 1 for x in sg)):
            raise ConfigError("analyze.s_grid must be a non-empty list in (0, 1]")
        if not all(j == "all" or (isinstance(j, int) and j >= 1) for j in v["analyze.j_values"]):
            raise ConfigError("analyze.j_values entries must be positive integers or 'all'")

    def canonical_json(self) -> str:
        return json.dumps(self.values, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    # typed views ---------------------------------------------------------
    def arch(self) -> ArchConfig:
        v = self.values
        return ArchConfig(v["model.arch"], v["model.layers"], v["model.hidden"], v["model.activation"])

    def embed_cfg(self, r: float | None = None) -> EmbedConfig:
        v = self.values
        return EmbedConfig(v["watermark.r"] if r is None else r, v["watermark.eps"], v["train.lr"],
                           v["train.epochs"], v["train.optimizer"])

    def design_cfg(self) -> DesignConfig:
        v = self.values
        return DesignConfig(v["watermark.T"], v["watermark.s"], v["watermark.alpha_tgt"], v["watermark.alpha_lb"])

    def kernel(self) -> KernelConfig:
        v = self.values
        return KernelConfig(v["explain.sigma_x"], v["explain.sigma_p"], v["explain.lambda"])

    def fractions(self) -> tuple:
        v = self.values
        return (v["split.train"], v["split.test"], v["split.val"])

    def graph(self) -> Graph:
        v = self.values
        if v["dataset.path"] is not None:
            return load_graph(v["dataset.path"])
        return synth_graph(
            Rng(v["dataset.synth.seed"]), v["dataset.synth.N"], v["dataset.synth.F"], v["dataset.synth.C"],
            v["dataset.synth.p_intra"], v["dataset.synth.p_inter"], v["dataset.synth.feature_sparsity"],
        )


MANIFEST_NAME = "manifest.json"


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config_digest: str
    code_version: str
    command: str
    artifacts: dict = field(default_factory=dict)
    created_at: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat())

    def add(self, root, path) -> None:
        rel = str(Path(path).relative_to(root))
        self.artifacts[rel] = file_sha256(path)

    def to_json(self) -> str:
        return json.dumps(
            {"config_digest": self.config_digest, "code_version": self.code_version, "command": self.command,
             "created_at": self.created_at, "artifacts": dict(sorted(self.artifacts.items()))},
            indent=2,
        ) + "\n"

    @classmethod
    def load(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(d["config_digest"], d["code_version"], d["command"], d["artifacts"], d["created_at"])

    def verify(self, root) -> list:
        """Relative paths whose current digest differs from the recorded one."""
        bad = []
        for rel, digest in self.artifacts.items():
            p = Path(root) / rel
            if not p.exists() or file_sha256(p) != digest:
                bad.append(rel)
        return bad
