"""Command-line entry point wiring all modules together.

Every run resolves its configuration (flags over config file over
defaults), writes a manifest describing the run before doing any work,
and can be replayed bit-for-bit from that manifest with
``--from-manifest``.  Exit codes: 0 success, 1 internal error, 2 usage,
3 invalid configuration, 4 width bounds, 5 evaluator failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import environment as env
from . import netlists, pareto
from .evaluation import (
    ANALYTICAL,
    CostPoint,
    CurveCache,
    EvalConfig,
    EvaluationError,
    analytical_cost,
    cost_point,
    external_cost,
)
from .graphs import (
    REGULAR_STRUCTURES,
    IllegalGraphError,
    PrefixGraph,
    WidthError,
)
from .optimizers import (
    SAConfig,
    TrainConfig,
    anneal,
    dqn_train,
    enumerate_designs,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_WIDTH = 4
EXIT_EVALUATOR = 5

EVALUATOR_ENV_VAR = "PREFIXOPT_EVALUATOR"


class ConfigError(ValueError):
    pass


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _eval_config(args) -> EvalConfig:
    doc = {}
    if getattr(args, "eval_config", None):
        doc = _load_json(args.eval_config)
    if getattr(args, "mode", None):
        doc["mode"] = args.mode
    if getattr(args, "targets", None):
        doc["delay_targets"] = [float(t) for t in args.targets.split(",")]
    if getattr(args, "evaluator", None):
        doc["command"] = args.evaluator
    override = os.environ.get(EVALUATOR_ENV_VAR)
    if override:
        doc["command"] = override
    if getattr(args, "cache", None):
        doc["cache_path"] = args.cache
    if getattr(args, "workers", None):
        doc["worker_count"] = args.workers
    try:
        return EvalConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _write_manifest(out_dir: Path, subcommand: str, config: dict, seed, outputs) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool": "prefixopt",
        "version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "config": config,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "finished": None,
        "outputs": [str(p) for p in outputs],
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _finish_manifest(path: Path) -> None:
    doc = json.loads(path.read_text())
    doc["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _load_graph(path: str) -> PrefixGraph:
    try:
        return PrefixGraph.from_json(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read graph {path}: {exc}") from exc


def _fmt(x: float) -> str:
    return f"{x:g}"


# -- subcommands ----------------------------------------------------------------


def cmd_train(args) -> int:
    if args.from_manifest:
        doc = _load_json(args.from_manifest)
        cfg = TrainConfig.from_dict(doc["config"]["train"])
        eval_cfg = EvalConfig.from_dict(doc["config"]["evaluation"])
        out_dir = Path(args.out or doc["config"]["out"])
    else:
        base = _load_json(args.config)["train"] if args.config else {}
        for key, val in (
            ("n", args.n),
            ("total_steps", args.steps),
            ("seed", args.seed),
            ("value_kind", args.value),
        ):
            if val is not None:
                base[key] = val
        if args.w is not None:
            base["w"] = (args.w, 1.0 - args.w)
        if "n" not in base or "total_steps" not in base:
            raise ConfigError("train requires --n and --steps (or a config file)")
        try:
            cfg = TrainConfig.from_dict(base)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, WidthError):
                raise
            raise ConfigError(str(exc)) from exc
        eval_cfg = _eval_config(args)
        out_dir = Path(args.out or "train-run")

    metrics_path = out_dir / "metrics.jsonl"
    manifest = _write_manifest(
        out_dir,
        "train",
        {"train": cfg.to_dict(), "evaluation": eval_cfg.to_dict(), "out": str(out_dir)},
        cfg.seed,
        [metrics_path],
    )
    cache = CurveCache(eval_cfg.cache_path) if eval_cfg.cache_path else None
    result = dqn_train(cfg, eval_cfg, cache, metrics_path=metrics_path,
                       checkpoint_dir=out_dir / "checkpoints")
    best = result.best_cost
    record = pareto.DesignRecord.for_graph(
        result.best_graph, "dqn", [best], w=cfg.w, mode=eval_cfg.mode, scaling=eval_cfg.scaling
    )
    (out_dir / "best_design.json").write_text(json.dumps(record.to_dict(), indent=2) + "\n")
    _finish_manifest(manifest)
    print(f"best design area {_fmt(best.area)} delay {_fmt(best.delay)} "
          f"scalarized {_fmt(result.best_scalar)}")
    print(f"metrics: {metrics_path}")
    return EXIT_OK


def cmd_anneal(args) -> int:
    base = _load_json(args.config)["anneal"] if args.config else {}
    for key, val in (
        ("n", args.n),
        ("total_steps", args.steps),
        ("seed", args.seed),
    ):
        if val is not None:
            base[key] = val
    if args.w is not None:
        base["w"] = (args.w, 1.0 - args.w)
    if "n" not in base or "total_steps" not in base:
        raise ConfigError("anneal requires --n and --steps (or a config file)")
    try:
        cfg = SAConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, WidthError):
            raise
        raise ConfigError(str(exc)) from exc
    eval_cfg = _eval_config(args)
    out_dir = Path(args.out or "anneal-run")
    manifest = _write_manifest(
        out_dir, "anneal",
        {"anneal": cfg.to_dict(), "evaluation": eval_cfg.to_dict(), "out": str(out_dir)},
        cfg.seed, [],
    )
    cache = CurveCache(eval_cfg.cache_path) if eval_cfg.cache_path else None
    result = anneal(cfg, eval_cfg, cache, log_every=max(1, cfg.total_steps // 100))
    record = pareto.DesignRecord.for_graph(
        result.best_graph, "sa", [result.best_cost], w=cfg.w,
        mode=eval_cfg.mode, scaling=eval_cfg.scaling,
    )
    (out_dir / "best_design.json").write_text(json.dumps(record.to_dict(), indent=2) + "\n")
    (out_dir / "trajectory.jsonl").write_text(
        "".join(json.dumps(t) + "\n" for t in result.trajectory)
    )
    _finish_manifest(manifest)
    print(f"best design area {_fmt(result.best_cost.area)} delay "
          f"{_fmt(result.best_cost.delay)} scalarized {_fmt(result.best_scalar)}")
    return EXIT_OK


def cmd_enumerate(args) -> int:
    out_dir = Path(args.out or f"enumeration-n{args.n}")
    manifest = _write_manifest(out_dir, "enumerate", {"n": args.n, "force": args.force},
                               None, [])
    enum = enumerate_designs(args.n, force=args.force)
    (out_dir / "summary.json").write_text(json.dumps(enum.to_dict(), indent=2) + "\n")
    records = []
    with open(out_dir / "designs.jsonl", "w") as fh:
        for bm, area, delay in enum.legal:
            fh.write(json.dumps({"bitmask": bm, "area": area, "delay": delay}) + "\n")
    for area, delay, bm, count in enum.front:
        g = enum.graph_for(bm)
        records.append(
            pareto.DesignRecord.for_graph(g, "exhaustive", [(area, delay)])
        )
    pareto.write_archive(out_dir, records)
    _finish_manifest(manifest)
    print(f"n={args.n}: {enum.legal_count} legal graphs, front size {len(enum.front)}")
    for area, delay, _, count in enum.front:
        print(f"  area {_fmt(area)} delay {_fmt(delay)} ({count} designs)")
    return EXIT_OK


def cmd_eval(args) -> int:
    g = _load_graph(args.graph)
    eval_cfg = _eval_config(args)
    cache = CurveCache(eval_cfg.cache_path) if eval_cfg.cache_path else None
    w = (args.w, 1.0 - args.w) if args.w is not None else (0.5, 0.5)
    point = cost_point(g, w, eval_cfg, cache)
    print(f"area {_fmt(point.area)} delay {_fmt(point.delay)}")
    return EXIT_OK


def cmd_emit_netlist(args) -> int:
    g = _load_graph(args.graph)
    netlist = netlists.emit(g, mode=args.netlist_mode)
    text = netlist.text()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out} ({len(netlist.gates)} gates)")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_baselines(args) -> int:
    eval_cfg = _eval_config(args)
    cache = CurveCache(eval_cfg.cache_path) if eval_cfg.cache_path else None
    out_dir = Path(args.out or f"baselines-n{args.n}")
    manifest = _write_manifest(out_dir, "baselines",
                               {"n": args.n, "evaluation": eval_cfg.to_dict()}, None, [])
    records = []
    for name, builder in REGULAR_STRUCTURES.items():
        g = builder(args.n)
        if eval_cfg.mode == ANALYTICAL:
            points = [analytical_cost(g, eval_cfg.scaling)]
        else:
            curve = external_cost(g, eval_cfg, cache)
            points = [
                CostPoint(eval_cfg.scaling[0] * a, eval_cfg.scaling[1] * d)
                for _, a, d in curve.samples
            ]
        records.append(
            pareto.DesignRecord.for_graph(g, f"regular:{name}", points,
                                          mode=eval_cfg.mode, scaling=eval_cfg.scaling)
        )
        pts = " ".join(f"({_fmt(p.area)}, {_fmt(p.delay)})" for p in records[-1].points)
        print(f"{name}: {pts}")
    pareto.write_archive(out_dir, records)
    _finish_manifest(manifest)
    return EXIT_OK


def cmd_pareto(args) -> int:
    records = []
    for directory in args.records:
        records.extend(pareto.read_records(directory))
    if not records:
        raise ConfigError("no records found in the given directories")
    front_obj = pareto.front(records)
    print(f"front: {len(front_obj)} points")
    for p in front_obj.points:
        print(f"  area {_fmt(p.area)} delay {_fmt(p.delay)} ids {','.join(p.ids)}")
    if args.out:
        pareto.write_archive(args.out, records, front_obj)
    if args.compare:
        other = pareto.read_front(args.compare)
        report = pareto.compare(front_obj, other)
        print(f"comparison vs {args.compare}: {report.summary}")
        if report.max_area_gap_pct is not None:
            print(f"max area gap {report.max_area_gap_pct:.1f}% at delay "
                  f"{_fmt(report.gap_at_delay)}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefixopt",
        description="Area-delay optimization of parallel prefix adder graphs.",
    )
    parser.add_argument("--version", action="version", version=f"prefixopt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_eval_flags(p):
        p.add_argument("--mode", choices=["analytical", "external"], default=None,
                       help="evaluation mode (default analytical)")
        p.add_argument("--eval-config", help="JSON evaluation config file")
        p.add_argument("--targets", help="comma-separated delay targets (external mode)")
        p.add_argument("--evaluator", help=f"evaluator command (or ${EVALUATOR_ENV_VAR})")
        p.add_argument("--cache", help="curve cache file path")
        p.add_argument("--workers", type=int, help="concurrent evaluator subprocesses")

    p = sub.add_parser("train", help="run the scalarized double-DQN optimizer")
    p.add_argument("--n", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--w", type=float, help="area weight in [0, 1]; delay gets 1-w")
    p.add_argument("--value", choices=["tabular", "neural"])
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON config with a 'train' section")
    p.add_argument("--from-manifest", help="replay a previous run's manifest")
    p.add_argument("--out")
    add_eval_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("anneal", help="run the simulated annealing baseline")
    p.add_argument("--n", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--w", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON config with an 'anneal' section")
    p.add_argument("--out")
    add_eval_flags(p)
    p.set_defaults(func=cmd_anneal)

    p = sub.add_parser("enumerate", help="exhaustively enumerate legal graphs (n <= 8)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--force", action="store_true", help="override the width guard")
    p.add_argument("--out")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("eval", help="cost a serialized graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--w", type=float)
    add_eval_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("emit-netlist", help="write the gate-level netlist of a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--netlist-mode", choices=["simple", "inverting"], default="simple")
    p.add_argument("--out")
    p.set_defaults(func=cmd_emit_netlist)

    p = sub.add_parser("baselines", help="cost the regular structures at one width")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out")
    add_eval_flags(p)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("pareto", help="compute/compare fronts over record archives")
    p.add_argument("--records", nargs="+", required=True,
                   help="archive directories containing records.jsonl")
    p.add_argument("--compare", help="archive directory to compare against")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pareto)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except WidthError as exc:
        print(f"width error: {exc}", file=sys.stderr)
        return EXIT_WIDTH
    except EvaluationError as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        if exc.output:
            print(exc.output, file=sys.stderr)
        return EXIT_EVALUATOR
    except (ConfigError, IllegalGraphError, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
