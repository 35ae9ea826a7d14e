"""Experiment runner and artifact input/output.

Subcommands:

``run``
    Execute the search (or the enumeration baseline) for one or more seeds
    and write, per seed, ``trace.jsonl``, ``summary.csv``, ``best_dfa.txt``,
    ``best_dfa.dot`` and ``run_meta.json``; multi-seed runs also write a
    ``median_summary.csv`` of the per-iteration median min-energy.
``validate``
    Check demonstration files against a map and print their color traces.
``export-dot``
    Render a DFA exchange file as Graphviz DOT.

Configuration files use one ``key = value`` pair per line (``#`` comments);
``demo`` and ``mandatory_positive`` may repeat.  All randomness flows from
the per-seed entry through named substreams, so artifacts are bit-identical
for identical (config, seed).  The environment variable ``DISS_THREADS``
caps how many seeds run in parallel.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from . import __version__, presets
from .mdp import Mdp, build_gridworld, load_demos, load_map, trace_of, validate_path
from .planner import PlannerContext
from .search import DissConfig, RunTrace, run_diss, run_enumeration_baseline
from .task import MONOLITHIC, Incremental, dfa_to_dot, dfa_to_text, is_bottom, load_dfa


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything one invocation needs, resolvable to model plus demos."""

    preset: str | None = None
    map_path: str | None = None
    demo_paths: list[str] = field(default_factory=list)
    repr_class: str = "monolithic"
    reference_path: str | None = None
    mandatory_positives: list[str] = field(default_factory=list)
    baseline: str = "none"
    enum_n: int = 80
    seeds: tuple[int, ...] = (0,)
    out_dir: str | None = None
    diss: DissConfig = field(default_factory=DissConfig)

    def resolve(self):
        """Load the model, demonstrations, and representation class."""
        if self.preset == "monolithic":
            return presets.bundled_mdp(), presets.monolithic_demos(), presets.monolithic_repr()
        if self.preset == "incremental":
            return presets.bundled_mdp(), presets.incremental_demos(), presets.incremental_repr()
        if self.preset is not None:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.map_path is None or not self.demo_paths:
            raise ConfigError("a map and at least one demo file are required")
        m = build_gridworld(load_map(self.map_path))
        demos = []
        for path in self.demo_paths:
            demos.extend(load_demos(path))
        if self.repr_class == "monolithic":
            repr_class = MONOLITHIC
        elif self.repr_class == "incremental":
            if self.reference_path is None:
                raise ConfigError("incremental runs need a reference DFA file")
            mandatory = frozenset(tuple(w) for w in self.mandatory_positives)
            repr_class = Incremental(load_dfa(self.reference_path), mandatory)
        else:
            raise ConfigError(f"unknown representation class {self.repr_class!r}")
        return m, demos, repr_class


_DISS_FIELDS = {f.name: f.type for f in dataclasses.fields(DissConfig)}


def _parse_scalar(value: str):
    value = value.strip()
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    if value.lower() in ("inf", "infinity"):
        return math.inf
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    diss_kwargs: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "preset":
            cfg.preset = value
        elif key == "map":
            cfg.map_path = value
        elif key == "demo":
            cfg.demo_paths.append(value)
        elif key == "demos":
            cfg.demo_paths.extend(v.strip() for v in value.split(",") if v.strip())
        elif key == "repr":
            cfg.repr_class = value
        elif key == "reference":
            cfg.reference_path = value
        elif key == "mandatory_positive":
            cfg.mandatory_positives.append(value)
        elif key == "baseline":
            cfg.baseline = value
        elif key == "enum_n":
            cfg.enum_n = int(value)
        elif key == "seeds":
            cfg.seeds = tuple(int(v) for v in value.split(",") if v.strip())
        elif key == "out":
            cfg.out_dir = value
        elif key in _DISS_FIELDS:
            diss_kwargs[key] = _parse_scalar(value)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if diss_kwargs:
        cfg.diss = dataclasses.replace(cfg.diss, **diss_kwargs)
    return cfg


def _config_echo(cfg: ExperimentConfig) -> dict:
    echo = dataclasses.asdict(cfg)
    echo["diss"] = {
        k: ("inf" if isinstance(v, float) and math.isinf(v) else v)
        for k, v in echo["diss"].items()
    }
    return echo


def _write_seed_artifacts(out: FsPath, trace: RunTrace, cfg: ExperimentConfig, seed: int):
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_text(trace.to_jsonl(), encoding="utf-8")
    (out / "summary.csv").write_text(trace.summary_csv(), encoding="utf-8")
    best = trace.best_task
    if is_bottom(best):
        (out / "best_dfa.txt").write_text("Bottom\n", encoding="utf-8")
        (out / "best_dfa.dot").write_text(
            'digraph best { none [shape=plaintext, label="no task found"]; }\n',
            encoding="utf-8",
        )
    else:
        (out / "best_dfa.txt").write_text(dfa_to_text(best.dfa) + "\n", encoding="utf-8")
        (out / "best_dfa.dot").write_text(dfa_to_dot(best.dfa, "best"), encoding="utf-8")
    meta = {
        "config": _config_echo(cfg),
        "seed": seed,
        "kind": trace.kind,
        "versions": {
            "specsearch": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }
    (out / "run_meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _median_summary(traces: list[RunTrace]) -> str:
    lines = ["iteration,median_min_energy"]
    n_iters = max(len(t.rows) for t in traces)
    for i in range(n_iters):
        vals = [t.min_energy_curve()[i] for t in traces if i < len(t.rows)]
        lines.append(f"{i + 1},{statistics.median(vals)}")
    return "\n".join(lines) + "\n"


def cmd_run(cfg: ExperimentConfig) -> int:
    if cfg.out_dir is None:
        raise ConfigError("an output directory is required")
    m, demos, repr_class = cfg.resolve()
    out_root = FsPath(cfg.out_dir)
    shared_planner = PlannerContext(
        m,
        demos,
        competency=cfg.diss.competency,
        tol=cfg.diss.calibration_tol,
        lam_max=cfg.diss.lambda_max,
        competency_mode=cfg.diss.competency_mode,
    )
    if cfg.baseline == "enum":
        trace = run_enumeration_baseline(
            demos, m, repr_class, cfg.diss, cfg.enum_n, planner=shared_planner
        )
        _write_seed_artifacts(out_root / "enum", trace, cfg, seed=0)
        print(f"enumeration baseline: min energy {trace.min_energy:.4f}")
        return 0
    if cfg.baseline != "none":
        raise ConfigError(f"unknown baseline {cfg.baseline!r}")

    def one_seed(seed: int) -> RunTrace:
        trace = run_diss(demos, m, repr_class, cfg.diss, seed=seed, planner=shared_planner)
        _write_seed_artifacts(out_root / f"seed_{seed}", trace, cfg, seed=seed)
        return trace

    threads = max(1, int(os.environ.get("DISS_THREADS", "1")))
    if threads > 1 and len(cfg.seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(one_seed, cfg.seeds))
    else:
        traces = [one_seed(seed) for seed in cfg.seeds]
    if len(traces) > 1:
        (out_root / "median_summary.csv").write_text(
            _median_summary(traces), encoding="utf-8"
        )
    for seed, trace in zip(cfg.seeds, traces):
        print(f"seed {seed}: min energy {trace.min_energy:.4f}")
    return 0


def cmd_validate(map_path: str, demo_paths: list[str]) -> int:
    if not demo_paths:
        print("warning: no demo files given")
        return 0
    m = build_gridworld(load_map(map_path))
    status = 0
    for path in demo_paths:
        for i, demo in enumerate(load_demos(path)):
            report = validate_path(m, demo)
            if report.ok:
                word = ",".join(trace_of(m, demo)) or "(empty)"
                kind = "complete" if demo.complete else "incomplete"
                print(f"{path}[{i}]: ok ({kind}, {len(demo)} moves) trace={word}")
            else:
                status = 1
                print(f"{path}[{i}]: VIOLATION at step {report.index}: {report.message}")
    return status


def cmd_export_dot(dfa_path: str) -> str:
    return dfa_to_dot(load_dfa(dfa_path))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specsearch",
        description="Search for automaton task specifications that explain demonstrations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the search or a baseline")
    run.add_argument("--config", help="key = value configuration file")
    run.add_argument("--preset", choices=["monolithic", "incremental"])
    run.add_argument("--out", help="output directory")
    run.add_argument("--seeds", help="comma-separated seed list")
    run.add_argument("--baseline", choices=["none", "enum"])
    run.add_argument("--enum-n", type=int, dest="enum_n")
    run.add_argument("--beta", help="pivot temperature (a float or 'inf')")
    run.add_argument("--theta", type=float)
    run.add_argument("--max-iters", type=int, dest="max_iters")
    run.add_argument("--p-drop", type=float, dest="p_drop")
    run.add_argument("--kappa", help="reset period (an int or 'inf')")
    run.add_argument("--competency", type=float)

    val = sub.add_parser("validate", help="check demos against a map")
    val.add_argument("--map", required=True)
    val.add_argument("demos", nargs="*")

    dot = sub.add_parser("export-dot", help="render a DFA file as DOT")
    dot.add_argument("dfa")
    dot.add_argument("--out", help="write here instead of stdout")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            if args.config:
                with open(args.config, "r", encoding="utf-8") as fh:
                    cfg = parse_config(fh.read())
            else:
                cfg = ExperimentConfig()
            if args.preset:
                cfg.preset = args.preset
            if args.out:
                cfg.out_dir = args.out
            if args.seeds:
                cfg.seeds = tuple(int(v) for v in args.seeds.split(","))
            if args.baseline:
                cfg.baseline = args.baseline
            if args.enum_n is not None:
                cfg.enum_n = args.enum_n
            overrides = {}
            if args.beta is not None:
                overrides["beta"] = float(_parse_scalar(args.beta))
            if args.theta is not None:
                overrides["theta"] = args.theta
            if args.max_iters is not None:
                overrides["max_iters"] = args.max_iters
            if args.p_drop is not None:
                overrides["p_drop"] = args.p_drop
            if args.kappa is not None:
                overrides["kappa"] = float(_parse_scalar(args.kappa))
            if args.competency is not None:
                overrides["competency"] = args.competency
            if overrides:
                cfg.diss = dataclasses.replace(cfg.diss, **overrides)
            return cmd_run(cfg)
        if args.command == "validate":
            return cmd_validate(args.map, args.demos)
        if args.command == "export-dot":
            text = cmd_export_dot(args.dfa)
            if args.out:
                FsPath(args.out).write_text(text, encoding="utf-8")
            else:
                print(text, end="")
            return 0
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
