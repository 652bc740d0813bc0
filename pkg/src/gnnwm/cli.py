"""``gnnwm`` command line: design, embed, null, verify, attack, analyze, synth."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import robustness_sweep
from .config import MANIFEST_NAME, ConfigError, ExperimentConfig, RunManifest
from .detectability import brute_force_space, overlap_curves, scientific
from .experiment import (ArtifactWriter, dumps_candidates, dumps_split, loads_candidates, loads_split,
                         run_trial, trial_seed)
from .graph import GraphFormatError, dumps_graph, load_graph, subgraph_size
from .models import dumps_model, load_model, loads_model, model_hash, sha256_text
from .numeric import Rng
from .verification import build_null, dumps_null, load_null, verify
from .watermark import STREAM_NULL, DesignInfeasibleError, design_watermark, dumps_secret, load_secret

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_NOT_VERIFIED = 3
EXIT_HASH_MISMATCH = 4

METRIC_COLUMNS = ("trial", "variant", "epoch", "loss", "loss_clf", "loss_wmk", "train_acc", "alignment")
SUMMARY_COLUMNS = ("trial", "variant", "train_acc", "test_acc", "alignment", "MI", "p_value")


class HashMismatchError(RuntimeError):
    pass


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_line(values) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow([_fmt(v) for v in values])
    return buf.getvalue()


def _say(args, text: str) -> None:
    if not args.quiet:
        sys.stdout.write(text)
        sys.stdout.flush()


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _graph(args, cfg):
    path = getattr(args, "graph", None)
    return load_graph(path) if path else cfg.graph()


def _threads() -> int:
    raw = os.environ.get("GNNWM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GNNWM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("GNNWM_THREADS must be at least 1")
    return n


# design -------------------------------------------------------------------
def cmd_design(args) -> int:
    cfg = _load_config(args)
    F = cfg["watermark.F"]
    if F is None:
        F = cfg["dataset.synth.F"] if cfg["dataset.path"] is None else load_graph(cfg["dataset.path"]).num_features
    if cfg["watermark.T"] == 1:
        sys.stderr.write("warning: sigma_nat_p = 0, a single explanation always matches itself\n")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        d = design_watermark(F, cfg["watermark.T"], cfg["watermark.alpha_tgt"], cfg["watermark.alpha_lb"])
    for w in caught:
        sys.stderr.write(f"warning: {w.message}\n")
    if d.M_required > F:
        raise DesignInfeasibleError(f"the design needs M = {d.M_required} indices but only F = {F} exist")
    for k, v in d.summary().items():
        print(f"{k} {_fmt(v)}")
    return EXIT_OK


# embed --------------------------------------------------------------------
def _trial_job(cfg_values: dict, graph_text: str | None, seed: int, trial: int, r, stream: bool):
    """Worker body; returns everything the single writer needs as text."""
    from .graph import loads_graph

    cfg = ExperimentConfig.from_dict(cfg_values)
    g = loads_graph(graph_text) if graph_text is not None else cfg.graph()
    label = "control" if r == 0 else "wm"

    def on_epoch(epoch, row, model):
        if stream:
            sys.stdout.write(_csv_line([trial, label, epoch] + [row.get(c, "") for c in METRIC_COLUMNS[3:]]))
            sys.stdout.flush()

    res = run_trial(cfg, g, seed, trial, r, on_epoch)
    rows = [[trial, label, h["epoch"]] + [h.get(c, "") for c in METRIC_COLUMNS[3:]] for h in res.result.history]
    return {
        "label": label,
        "model": dumps_model(res.result.model),
        "secret": dumps_secret(res.result.secret),
        "null": dumps_null(res.null),
        "split": dumps_split(res.split),
        "candidates": dumps_candidates(res.result.secret.subgraphs.node_sets),
        "report": res.report.to_json() + "\n",
        "metrics": rows,
        "summary": res.summary_row(),
    }


def cmd_embed(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    writer = ArtifactWriter(out)
    manifest = RunManifest(cfg.digest(), __version__, "embed")
    try:
        g = _graph(args, cfg)
        graph_text = dumps_graph(g)
        writer.write_text("graph.txt", graph_text)
        writer.write_text("config.json", json.dumps(cfg.values, indent=2, sort_keys=True) + "\n")
        jobs = []
        for t in range(cfg["trials"]):
            seed = trial_seed(cfg["seed"], t)
            jobs.append((seed, t, None))
            jobs.append((seed, t, 0.0))
        workers = min(_threads(), len(jobs))
        stream = not args.quiet and workers == 1
        _say(args, _csv_line(METRIC_COLUMNS))
        if workers == 1:
            results = [_trial_job(cfg.values, graph_text, s, t, r, stream) for s, t, r in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = [pool.submit(_trial_job, cfg.values, graph_text, s, t, r, False) for s, t, r in jobs]
                results = [f.result() for f in futs]
            for res in results:
                for row in res["metrics"]:
                    _say(args, _csv_line(row))

        summary = [_csv_line(SUMMARY_COLUMNS)]
        for (seed, t, r), res in zip(jobs, results):
            stem = f"trial_{t}"
            prefix = "" if res["label"] == "wm" else "control_"
            writer.write_text(f"{stem}/{prefix}model.ckpt", res["model"])
            writer.write_text(f"{stem}/{prefix}null.txt", res["null"])
            writer.write_text(f"{stem}/{prefix}report.json", res["report"])
            if res["label"] == "wm":
                writer.write_text(f"{stem}/secret.txt", res["secret"], mode=0o600)
                writer.write_text(f"{stem}/candidates.txt", res["candidates"])
                writer.write_text(f"{stem}/split.txt", res["split"])
            metrics = _csv_line(METRIC_COLUMNS) + "".join(_csv_line(r_) for r_ in res["metrics"])
            writer.write_text(f"{stem}/{prefix}metrics.csv", metrics)
            summary.append(_csv_line([res["summary"][c] for c in SUMMARY_COLUMNS]))
        writer.write_text("summary.csv", "".join(summary))

        table = _table_row([r["summary"] for r in results])
        writer.write_text("table.csv", table)
        for p in writer.written:
            manifest.add(out, p)
        writer.write_text(MANIFEST_NAME, manifest.to_json())
        sys.stderr.write(table)
    except BaseException:
        writer.rollback()
        raise
    return EXIT_OK


def _table_row(rows: list) -> str:
    """Averages over trials: accuracies with and without watermark, alignment, p-value."""
    wm = [r for r in rows if r["variant"] == "wm"]
    ctl = [r for r in rows if r["variant"] == "control"]

    def mean(rs, key):
        return float(np.mean([r[key] for r in rs])) if rs else float("nan")

    cols = ("train_acc_wm", "test_acc_wm", "train_acc_ctl", "test_acc_ctl", "alignment", "p_value")
    vals = [mean(wm, "train_acc"), mean(wm, "test_acc"), mean(ctl, "train_acc"), mean(ctl, "test_acc"),
            mean(wm, "alignment"), mean(wm, "p_value")]
    return _csv_line(cols) + _csv_line(vals)


# null ---------------------------------------------------------------------
def cmd_null(args) -> int:
    cfg = _load_config(args)
    g = _graph(args, cfg)
    model = load_model(args.model)
    split = loads_split(Path(args.split).read_text(encoding="utf-8"))
    rng = Rng(args.null_seed if args.null_seed is not None else cfg["seed"]).spawn(STREAM_NULL)
    null = build_null(model, g, split, cfg["watermark.T"], cfg["watermark.s"], cfg["verify.D"],
                      cfg["verify.I"], rng, cfg.kernel())
    out = Path(args.out)
    ArtifactWriter(out.parent).write_text(out.name, dumps_null(null))
    _say(args, f"mu {null.mu!r}\nsigma {null.sigma!r}\nn_sub {null.n_sub}\n")
    return EXIT_OK


# verify -------------------------------------------------------------------
def cmd_verify(args) -> int:
    cfg = _load_config(args)
    model_text = Path(args.model).read_text(encoding="utf-8")
    null = load_null(args.null)
    if sha256_text(model_text) != null.model_hash:
        raise HashMismatchError(
            f"model digest {sha256_text(model_text)[:12]} does not match the null's {null.model_hash[:12]}; "
            "rebuild the null for this model"
        )
    model = loads_model(model_text)
    candidates = loads_candidates(Path(args.candidates).read_text(encoding="utf-8"))
    g = _graph(args, cfg)
    alpha = args.alpha_v if args.alpha_v is not None else cfg["verify.alpha_v"]
    report = verify(model, g, candidates, null, alpha, cfg.kernel(),
                    {"model": str(args.model), "candidates": str(args.candidates)})
    print(report.to_json())
    return EXIT_OK if report.verdict else EXIT_NOT_VERIFIED


# attack -------------------------------------------------------------------
def _parse_grid(text: str | None, kind: str):
    if text is None:
        return None
    vals = [float(t) for t in text.split(",") if t.strip()]
    return [int(v) for v in vals] if kind == "finetune" else vals


def cmd_attack(args) -> int:
    cfg = _load_config(args)
    base = Path(args.trial_dir) if args.trial_dir else None

    def pick(value, name):
        if value:
            return Path(value)
        if base is None:
            raise ConfigError(f"--{name} is required without --trial-dir")
        return base / f"{name}.txt" if name != "model" else base / "model.ckpt"

    model = load_model(pick(args.model, "model"))
    secret = load_secret(pick(args.secret, "secret"))
    null = load_null(pick(args.null, "null"))
    split = loads_split(pick(args.split, "split").read_text(encoding="utf-8"))
    if model_hash(model) != null.model_hash:
        raise HashMismatchError("model digest does not match the null statistics")
    if args.graph is None and base is not None and (base.parent / "graph.txt").exists():
        args.graph = str(base.parent / "graph.txt")
    g = _graph(args, cfg)
    grid = _parse_grid(args.grid, args.kind)
    if grid is None:
        grid = cfg["attack.prune_grid"] if args.kind == "prune" else list(range(1, cfg["attack.finetune_epochs"] + 1))
    report = robustness_sweep(model, g, split, secret, null, args.kind, grid, cfg["train.lr"],
                              cfg["attack.lr_scale"], cfg["attack.norm_order"], cfg.kernel(),
                              cfg["train.optimizer"])
    out = Path(args.out)
    writer = ArtifactWriter(out)
    try:
        stem = f"attack_{args.kind}"
        writer.write_text(f"{stem}.csv", report.to_csv())
        for col, text in report.plot_data().items():
            writer.write_text(f"{stem}_{col}.tsv", text)
    except BaseException:
        writer.rollback()
        raise
    _say(args, report.to_csv())
    return EXIT_OK


# analyze ------------------------------------------------------------------
def cmd_analyze(args) -> int:
    cfg = _load_config(args)
    N, T, s = cfg["analyze.N_train"], cfg["analyze.T"], cfg["analyze.s"]
    n_sub = subgraph_size(s, N)
    if T * n_sub > N:
        raise ConfigError(f"T * n_sub = {T * n_sub} exceeds N_train = {N}")
    count, log10_sets = brute_force_space(N, n_sub, T)
    mant = 10 ** (log10_sets - math.floor(log10_sets))
    lines = [
        f"N_train {N}",
        f"n_sub {n_sub}",
        f"T {T}",
        f"subgraphs {scientific(count)}",
        f"log10_subgraph_sets {log10_sets!r}",
        f"subgraph_sets {mant:.1f}e{math.floor(log10_sets)}",
    ]
    brute = "\n".join(lines) + "\n"
    rng = Rng(cfg["seed"])
    for s_ in cfg["analyze.s_grid"]:
        if subgraph_size(s_, N) > N:
            raise ConfigError("analyze.s_grid yields n_sub > N_train")
    rows = overlap_curves(N, T, cfg["analyze.s_grid"], cfg["analyze.j_values"], rng, cfg["analyze.mc_trials"])
    cols = ("s", "j", "prob_paper", "prob_hypergeom", "prob_mc", "mc_stderr")
    tsv = ["\t".join(cols)]
    for r in rows:
        tsv.append("\t".join(_fmt(r[c]) for c in cols))
    curves = "\n".join(tsv) + "\n"
    out = Path(args.out)
    writer = ArtifactWriter(out)
    try:
        writer.write_text("brute_force.txt", brute)
        writer.write_text("overlap_curves.tsv", curves)
    except BaseException:
        writer.rollback()
        raise
    _say(args, brute)
    return EXIT_OK


# synth --------------------------------------------------------------------
def cmd_synth(args) -> int:
    cfg = _load_config(args)
    if args.seed is not None:
        cfg = cfg.with_overrides(**{"dataset.synth.seed": args.seed})
    g = cfg.graph()
    out = Path(args.out)
    ArtifactWriter(out).write_text("graph.txt", dumps_graph(g))
    _say(args, f"nodes {g.num_nodes}\nfeatures {g.num_features}\nclasses {g.num_classes}\nedges {g.num_edges}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--seed", type=int, help="master seed (u64)")
    common.add_argument("--out", default="runs", help="output directory or file")
    common.add_argument("--quiet", action="store_true", help="suppress the stdout stream")

    p = argparse.ArgumentParser(prog="gnnwm", description="Explanation watermarks for GNN node classifiers.")
    p.add_argument("--version", action="version", version=f"gnnwm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("design", parents=[common], help="print the watermark design").set_defaults(func=cmd_design)

    e = sub.add_parser("embed", parents=[common], help="train watermarked and control models")
    e.add_argument("--graph", help="graph file (default: config dataset)")
    e.set_defaults(func=cmd_embed)

    n = sub.add_parser("null", parents=[common], help="simulate the null MI distribution for a model")
    n.add_argument("--model", required=True)
    n.add_argument("--split", required=True)
    n.add_argument("--graph")
    n.add_argument("--null-seed", type=int)
    n.set_defaults(func=cmd_null)

    v = sub.add_parser("verify", parents=[common], help="test ownership of a model")
    v.add_argument("--model", required=True)
    v.add_argument("--null", required=True)
    v.add_argument("--candidates", required=True)
    v.add_argument("--graph")
    v.add_argument("--alpha-v", type=float)
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("attack", parents=[common], help="pruning / fine-tuning robustness sweep")
    a.add_argument("--kind", required=True, choices=("prune", "finetune"))
    a.add_argument("--trial-dir", help="directory written by embed for one trial")
    a.add_argument("--model")
    a.add_argument("--secret")
    a.add_argument("--null")
    a.add_argument("--split")
    a.add_argument("--graph")
    a.add_argument("--grid", help="comma-separated rates or epoch counts")
    a.set_defaults(func=cmd_attack)

    sub.add_parser("analyze", parents=[common], help="detectability numbers").set_defaults(func=cmd_analyze)
    sub.add_parser("synth", parents=[common], help="generate a synthetic graph").set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DesignInfeasibleError) as exc:
        sys.stderr.write(f"gnnwm {args.command}: {exc}\n")
        return EXIT_USAGE
    except HashMismatchError as exc:
        sys.stderr.write(f"gnnwm {args.command}: {exc}\n")
        return EXIT_HASH_MISMATCH
    except (GraphFormatError, ValueError, OSError, RuntimeError) as exc:
        sys.stderr.write(f"gnnwm {args.command}: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
