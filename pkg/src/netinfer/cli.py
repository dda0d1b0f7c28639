"""Command-line front end: simulate datasets, train, sweep, and report.

Experiments are described by a single JSON config; any field can be
overridden with repeatable --set key=value flags (dotted paths). Every seed
is explicit in the config, so artifacts are reproducible byte-for-byte.

Exit codes: 0 success, 2 config error, 3 missing input, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .dynamics import (Dataset, generate_cml_dataset, generate_voter_dataset,
                       load_dataset, save_dataset)
from .graphs import Graph, generate_ws, partition, save_partition
from .metrics import (MetricsReport, evaluate_completion, evaluate_reconstruction,
                      write_metrics)
from .training import (TrainConfig, optimize_test_states, save_checkpoint,
                       train_completion, train_reconstruction, write_history)

DEFAULT_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)


class ConfigError(Exception):
    """Configuration problem; message names the offending field."""


class MissingInputError(Exception):
    """A required input file or directory does not exist."""


# ---------------------------------------------------------------------------
# Config loading and validation
# ---------------------------------------------------------------------------

def apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set {assignment!r}: expected key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {part} is not a section")
    node[parts[-1]] = value


def _section(cfg: dict, name: str) -> dict:
    if name not in cfg:
        raise ConfigError(f"{name}: missing section")
    if not isinstance(cfg[name], dict):
        raise ConfigError(f"{name}: must be an object")
    return cfg[name]


def _field(section: dict, section_name: str, key: str, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"{section_name}.{key}: missing field")
        return default
    return section[key]


def validate_config(cfg: dict) -> dict:
    """Normalize and validate; returns the config with defaults filled in."""
    cfg = copy.deepcopy(cfg)
    task = cfg.get("task")
    if task not in ("reconstruct", "complete"):
        raise ConfigError(f"task: must be 'reconstruct' or 'complete', got {task!r}")

    g = _section(cfg, "graph")
    n = _field(g, "graph", "n", required=True)
    k = _field(g, "graph", "k", 4)
    p = _field(g, "graph", "p_rewire", 0.2)
    g.setdefault("k", k)
    g.setdefault("p_rewire", p)
    _field(g, "graph", "seed", required=True)
    if not (isinstance(n, int) and n > 1):
        raise ConfigError(f"graph.n: must be an integer > 1, got {n!r}")
    if not (isinstance(k, int) and k % 2 == 0 and 0 < k < n):
        raise ConfigError(f"graph.k: must be even with 0 < k < n, got {k!r}")
    if not 0 <= p <= 1:
        raise ConfigError(f"graph.p_rewire: must be in [0,1], got {p!r}")

    dyn = _section(cfg, "dynamics")
    model = _field(dyn, "dynamics", "model", required=True)
    if model not in ("voter", "cml"):
        raise ConfigError(f"dynamics.model: must be 'voter' or 'cml', got {model!r}")
    if model == "cml":
        dyn.setdefault("lam", 3.5)
        dyn.setdefault("eps", 0.2)
        dyn.setdefault("form", "paper_literal")
        if dyn["lam"] <= 0:
            raise ConfigError(f"dynamics.lam: must be positive, got {dyn['lam']!r}")
        if not 0 <= dyn["eps"] <= 1:
            raise ConfigError(f"dynamics.eps: must be in [0,1], got {dyn['eps']!r}")
        if dyn["form"] not in ("paper_literal", "standard"):
            raise ConfigError(f"dynamics.form: unknown form {dyn['form']!r}")

    d = _section(cfg, "dataset")
    count = _field(d, "dataset", "count", required=True)
    steps = _field(d, "dataset", "steps", required=True)
    _field(d, "dataset", "seed", required=True)
    _field(d, "dataset", "dir", required=True)
    if not (isinstance(count, int) and count > 0):
        raise ConfigError(f"dataset.count: must be a positive integer, got {count!r}")
    if not (isinstance(steps, int) and steps > 0):
        raise ConfigError(f"dataset.steps: must be a positive integer, got {steps!r}")
    if model == "voter":
        d.setdefault("record_length", 2)
    else:
        rl = _field(d, "dataset", "record_length", required=True)
        if not (isinstance(rl, int) and rl >= 2 and steps % rl == 0):
            raise ConfigError(f"dataset.record_length: must be >= 2 and divide "
                              f"steps={steps}, got {rl!r}")

    if task == "complete":
        m = _section(cfg, "missing")
        if ("count" in m) == ("fraction" in m):
            raise ConfigError("missing: exactly one of count or fraction required")
        if "fraction" in m and not 0 <= m["fraction"] <= 0.9:
            raise ConfigError(f"missing.fraction: must be in [0, 0.9], "
                              f"got {m['fraction']!r}")
        if "count" in m and not (isinstance(m["count"], int) and 0 <= m["count"] < n):
            raise ConfigError(f"missing.count: must be in [0, n), got {m['count']!r}")
        _field(m, "missing", "seed", required=True)

    cfg.setdefault("train", {})
    if not isinstance(cfg["train"], dict):
        raise ConfigError("train: must be an object")
    cfg.setdefault("eval_seed", 0)
    if "output_dir" not in cfg:
        raise ConfigError("output_dir: missing field")
    return cfg


def build_train_config(cfg: dict) -> TrainConfig:
    model = cfg["dynamics"]["model"]
    task = cfg["task"]
    defaults = {
        "loss_kind": "nll_discrete" if model == "voter" else "mse_continuous",
        "skip_state_phase": model == "cml" and task == "complete",
        "msg_sizes": (32, 16, 8, 4) if model == "cml" and task == "complete"
                     else (64, 32, 16, 8),
        "seed": 0,
    }
    merged = {**defaults, **cfg["train"]}
    if isinstance(merged.get("msg_sizes"), list):
        merged["msg_sizes"] = tuple(merged["msg_sizes"])
    try:
        tc = TrainConfig(**merged)
        tc.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc
    return tc


def load_config(path: str, sets: list[str], paper_scale: bool = False) -> dict:
    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"config file {path} does not exist")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    for assignment in sets:
        apply_set(cfg, assignment)
    if paper_scale:
        apply_paper_scale(cfg)
    return validate_config(cfg)


def apply_paper_scale(cfg: dict) -> None:
    """Restore full published sample counts for stretch runs."""
    model = cfg.get("dynamics", {}).get("model")
    task = cfg.get("task")
    n = cfg.get("graph", {}).get("n", 10)
    d = cfg.setdefault("dataset", {})
    if model == "voter":
        d["count"], d["steps"] = 200, 50
    elif model == "cml":
        d["steps"] = 100
        d["record_length"] = 10
        if task == "reconstruct":
            d["count"] = 5000
        else:
            d["count"] = 2000 if n <= 10 else 6000


def run_id_for(cfg: dict) -> str:
    return hashlib.sha1(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------

def build_dataset_from_config(cfg: dict) -> Dataset:
    g = cfg["graph"]
    d = cfg["dataset"]
    adj = generate_ws(g["n"], g["k"], g["p_rewire"], g["seed"]).to_adjacency()
    if cfg["dynamics"]["model"] == "voter":
        return generate_voter_dataset(adj, d["count"], d["steps"], d["seed"])
    dyn = cfg["dynamics"]
    return generate_cml_dataset(adj, d["count"], d["steps"], d["record_length"],
                                d["seed"], dyn["lam"], dyn["eps"], dyn["form"])


def cmd_simulate(cfg: dict, out: str | None) -> int:
    ds = build_dataset_from_config(cfg)
    target = Path(out or cfg["dataset"]["dir"])
    save_dataset(target, ds)
    print(f"dataset {target}: {ds.samples} samples of length {ds.record_length} "
          f"on {ds.n} nodes (train {len(ds.split.train)}, val {len(ds.split.val)}, "
          f"test {len(ds.split.test)})")
    return 0


def missing_count_from(cfg: dict) -> int:
    m = cfg["missing"]
    if "count" in m:
        return m["count"]
    return max(1, round(m["fraction"] * cfg["graph"]["n"]))


def run_training(cfg: dict, out: str | None,
                 stochastic_states: bool = False) -> MetricsReport:
    data_dir = Path(cfg["dataset"]["dir"])
    if not data_dir.exists():
        raise MissingInputError(f"dataset directory {data_dir} does not exist "
                                f"(run the simulate command first)")
    ds = load_dataset(data_dir)
    tc = build_train_config(cfg)
    run_dir = Path(out or cfg["output_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    eval_seed = cfg["eval_seed"]

    if cfg["task"] == "reconstruct":
        gen, dyn, history = train_reconstruction(ds, tc, truth_adj=ds.adjacency)
        report = evaluate_reconstruction(gen, dyn, ds, ds.adjacency, eval_seed,
                                         stochastic_states)
        write_history(run_dir / "history.csv", history)
        save_checkpoint(run_dir, gen, dyn)
    else:
        graph = Graph.from_adjacency(ds.adjacency)
        part = partition(graph, missing_count_from(cfg), cfg["missing"]["seed"])
        save_partition(run_dir / "partition.json", part)
        dyn, gen, init_learner, history = train_completion(ds, part, tc)
        adj_eval = gen.sample_hard(np.random.default_rng(eval_seed))
        gamma_test, _ = optimize_test_states(dyn, adj_eval, ds, part, tc)
        report = evaluate_completion(gen, dyn, gamma_test, part, ds, eval_seed,
                                     stochastic_states)
        write_history(run_dir / "history.csv", history)
        save_checkpoint(run_dir, gen, dyn, init_learner, gamma_test)

    write_metrics(run_dir / "metrics.json", report, config=cfg,
                  run_id=run_id_for(cfg))
    return report


def cmd_train(cfg: dict, out: str | None, stochastic_states: bool) -> int:
    report = run_training(cfg, out, stochastic_states)
    fields = {k: v for k, v in report.to_dict().items()
              if isinstance(v, float)}
    summary = " ".join(f"{k}={v:.4f}" for k, v in fields.items())
    print(f"run {out or cfg['output_dir']}: {summary}")
    return 0


def _sweep_job(job: dict) -> tuple[float, int, float | None, str | None]:
    """One completion run; returns (fraction, seed, missing_auc, error)."""
    try:
        data_dir = Path(job["config"]["dataset"]["dir"])
        if not data_dir.exists():
            save_dataset(data_dir, build_dataset_from_config(job["config"]))
        report = run_training(job["config"], None)
        return job["fraction"], job["seed"], report.missing_auc, None
    except Exception as exc:
        return job["fraction"], job["seed"], None, f"{type(exc).__name__}: {exc}"


def cmd_sweep_missing(cfg: dict, out: str | None, fractions: list[float],
                      seeds: int) -> int:
    if cfg["task"] != "complete":
        raise ConfigError("task: sweep-missing requires task 'complete'")
    root = Path(out or cfg["output_dir"])
    root.mkdir(parents=True, exist_ok=True)

    jobs = []
    for s in range(seeds):
        for f in fractions:
            sub = copy.deepcopy(cfg)
            sub["graph"]["seed"] += s
            sub["dataset"]["seed"] += s
            sub["dataset"]["dir"] = str(root / f"data_s{s}")
            sub["missing"] = {"fraction": f, "seed": cfg["missing"]["seed"] + s}
            sub["train"]["seed"] = sub["train"].get("seed", 0) + s
            sub["output_dir"] = str(root / f"run_f{f:g}_s{s}")
            jobs.append({"config": validate_config(sub), "fraction": f, "seed": s})

    # Jobs sharing a seed share a dataset directory; materialize each one
    # before dispatch so parallel workers never race on generation.
    for job in jobs:
        data_dir = Path(job["config"]["dataset"]["dir"])
        if not data_dir.exists():
            save_dataset(data_dir, build_dataset_from_config(job["config"]))

    workers = int(os.environ.get("NETINFER_THREADS", "1") or "1")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(job) for job in jobs]

    lines = ["missing_fraction,missing_auc,seed"]
    for fraction, seed, value, error in sorted(results, key=lambda r: (r[0], r[1])):
        if error is not None or value is None:
            lines.append(f"{fraction:g},error,{seed}")
            if error is not None:
                print(f"fraction {fraction:g} seed {seed} failed: {error}",
                      file=sys.stderr)
        else:
            lines.append(f"{fraction:g},{value:.17g},{seed}")
    (root / "sweep.csv").write_text("\n".join(lines) + "\n")
    print(f"sweep written to {root / 'sweep.csv'} ({len(results)} rows)")
    return 0


REPORT_COLUMNS = ("auc", "acc_net", "tpr", "fpr", "acc_states",
                  "missing_auc", "missing_acc_net", "missing_acc_states",
                  "observed_acc_states")


def cmd_report(run_dirs: list[str], out: str | None) -> int:
    rows = []
    skipped = []
    for raw in run_dirs:
        path = Path(raw) / "metrics.json"
        try:
            payload = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            skipped.append({"dir": raw, "reason": str(exc)})
            continue
        payload["run"] = raw
        rows.append(payload)

    def fmt(value) -> str:
        return f"{value:.4f}" if isinstance(value, float) else "-"

    header = f"{'task':<12} {'run':<32} " + " ".join(f"{c:>12}" for c in REPORT_COLUMNS)
    print(header)
    for task in ("reconstruct", "complete"):
        for row in rows:
            if row.get("task") != task:
                continue
            cells = " ".join(f"{fmt(row.get(c)):>12}" for c in REPORT_COLUMNS)
            print(f"{task:<12} {row['run']:<32} {cells}")
    for entry in skipped:
        print(f"skipped {entry['dir']}: {entry['reason']}", file=sys.stderr)

    target = Path(out or ".") / "report.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps({"runs": rows, "skipped": skipped}, indent=1) + "\n")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netinfer",
        description="Network reconstruction and completion from dynamical "
                    "time series.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="experiment JSON file")
            p.add_argument("--set", action="append", default=[], metavar="K=V",
                           help="override a config field (dotted path)")
            p.add_argument("--paper-scale", action="store_true",
                           help="restore full published sample counts")
        p.add_argument("--out", default=None, help="output directory override")

    p_sim = sub.add_parser("simulate", help="generate a graph and dataset")
    common(p_sim)

    p_train = sub.add_parser("train", help="train and evaluate one experiment")
    common(p_train)
    p_train.add_argument("--stochastic-states", action="store_true",
                         help="sample discrete state predictions instead of argmax")

    p_sweep = sub.add_parser("sweep-missing",
                             help="run completion across missing fractions")
    common(p_sweep)
    p_sweep.add_argument("--fractions", default=None,
                         help="comma-separated fractions (default 0.1..0.7)")
    p_sweep.add_argument("--seeds", type=int, default=3,
                         help="replicates per fraction")

    p_rep = sub.add_parser("report", help="aggregate metrics from run directories")
    common(p_rep, needs_config=False)
    p_rep.add_argument("run_dirs", nargs="*", help="run directories with metrics.json")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.run_dirs, args.out)
        cfg = load_config(args.config, args.set, args.paper_scale)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.out, args.stochastic_states)
        if args.command == "sweep-missing":
            if args.fractions:
                fractions = [float(f) for f in args.fractions.split(",")]
            else:
                fractions = list(DEFAULT_FRACTIONS)
            return cmd_sweep_missing(cfg, args.out, fractions, args.seeds)
        raise ValueError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingInputError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 3
    except Exception:
        traceback.print_exc()
        return 4


if __name__ == "__main__":
    sys.exit(main())
