"""Command line entry point: ``savic run | sweep | check``.

Exit codes: 0 ok, 1 configuration error, 2 divergence, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import engine
from .errors import ConfigurationError

log = logging.getLogger("savic")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INVARIANT = 0, 1, 2, 3
SWEEP_AXES = {
    "gamma": ("algorithm", "gamma", ("savic", "minibatch_sgd")),
    "tau": ("algorithm", "tau", ("fedadagrad",)),
    "H": ("algorithm", "H", ("savic",)),
    "M": ("problem", "M", ("savic", "fedadagrad", "minibatch_sgd")),
    "skew": ("problem", "skew", ("savic", "fedadagrad", "minibatch_sgd")),
}
SWEEP_HEADER = ("value", "iterations_to_epsilon", "final_f_gap", "final_dist_sq")


def _write_run(out: Path, plan: cfgmod.Plan, record: engine.RunRecord, with_bounds: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    extra = None
    if with_bounds:
        col = cfgmod.bound_column(plan, len(record.rows))
        if col is not None:
            extra = {"bound_shape": col}
    with open(out / "run.csv", "w", newline="") as fh:
        record.to_csv(fh, extra)
    summary = record.summary()
    summary["effective"] = plan.effective
    summary["observed_max_grad_entry"] = record.observed_max_grad
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def epsilon_for(cfg: cfgmod.ExperimentConfig, record: engine.RunRecord) -> float:
    return cfg.epsilon if cfg.epsilon is not None else 1e-3 * record.rows[0].f_gap


def run_experiment(cfg: cfgmod.ExperimentConfig, out: Path, jobs: int = 1, fixed=frozenset()):
    """Run the (possibly ensembled) experiment and write its artifacts.

    Returns the list of records, ensemble member order.
    """
    suite = cfgmod.build_suite(cfg.problem)
    seeds = [cfg.seed + i for i in range(cfg.ensemble)]
    plans = [cfgmod.make_plan(cfg, seed=s, suite=suite, fixed=fixed) for s in seeds]
    if jobs > 1 and len(plans) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(cfgmod.execute, plans))
    else:
        records = [cfgmod.execute(p) for p in plans]

    if cfg.ensemble == 1:
        _write_run(out, plans[0], records[0], cfg.bounds)
    else:
        for s, plan, rec in zip(seeds, plans, records):
            _write_run(out / f"seed_{s:04d}", plan, rec, cfg.bounds)
        final = np.array([r.final.dist_sq for r in records])
        gaps = np.array([r.final.f_gap for r in records])
        aggregate = {
            "members": len(records),
            "seeds": seeds,
            "final_dist_sq_mean": float(final.mean()),
            "final_dist_sq_std": float(final.std(ddof=1)),
            "final_f_gap_mean": float(gaps.mean()),
            "final_f_gap_std": float(gaps.std(ddof=1)),
            "diverged": [r.status for r in records if r.diverged_at is not None],
            "effective": plans[0].effective,
            "observed_max_grad_entry": max(r.observed_max_grad for r in records),
        }
        out.mkdir(parents=True, exist_ok=True)
        text = json.dumps(aggregate, indent=2, sort_keys=True) + "\n"
        (out / "aggregate.json").write_text(text)
        (out / "summary.json").write_text(text)
    return records


def cmd_run(config_path, out=None, seed=None, jobs=1, bounds=False) -> int:
    try:
        cfg = cfgmod.load_config(config_path)
        if seed is not None:
            cfg.seed = seed
        cfg.bounds = cfg.bounds or bounds
        records = run_experiment(cfg, Path(out or cfg.out), jobs)
    except ConfigurationError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    bad = [r for r in records if r.diverged_at is not None]
    for r in bad:
        log.error("%s", r.status)
    return EXIT_DIVERGED if bad else EXIT_OK


def _parse_values(axis, values):
    out = []
    for v in values:
        v = v.strip()
        if not v:
            continue
        out.append(int(v) if axis in ("H", "M") else float(v))
    return out


def cmd_sweep(config_path, axis, values, out=None, seed=None, jobs=1) -> int:
    try:
        cfg = cfgmod.load_config(config_path)
        if seed is not None:
            cfg.seed = seed
        if axis not in SWEEP_AXES:
            raise ConfigurationError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
        section, key, algs = SWEEP_AXES[axis]
        if cfg.algorithm.name not in algs:
            raise ConfigurationError(f"axis {axis!r} does not apply to algorithm {cfg.algorithm.name!r}")
        if axis == "skew" and cfg.problem.type != "logreg":
            raise ConfigurationError("axis 'skew' needs problem.type = 'logreg'")
        vals = _parse_values(axis, values)
        if not vals:
            raise ConfigurationError("sweep needs a non-empty list of values")
        root = Path(out or cfg.out)
        rows, diverged = [], False
        for v in vals:
            point = copy.deepcopy(cfg)
            setattr(getattr(point, section), key, v)
            records = run_experiment(point, root / f"{axis}={v}", jobs, fixed=frozenset({key}))
            its = [engine.iterations_to_epsilon(r, epsilon_for(point, r)) for r in records]
            reached = [i for i in its if i is not None]
            it = float(np.mean(reached)) if len(reached) == len(its) else math.nan
            rows.append((v, it, float(np.mean([r.final.f_gap for r in records])),
                         float(np.mean([r.final.dist_sq for r in records]))))
            diverged = diverged or any(r.diverged_at is not None for r in records)
    except ConfigurationError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for v, it, fg, ds in rows:
            w.writerow([repr(v), "" if math.isnan(it) else repr(it), repr(fg), repr(ds)])
    return EXIT_DIVERGED if diverged else EXIT_OK


def find_violations(record: engine.RunRecord, plan: cfgmod.Plan) -> list[str]:
    """Row-level invariant violations: scaling sandwich, growth, sync consensus and V_t."""
    out = []
    pcfg = getattr(plan.engine_config, "precond", None)
    for i, r in enumerate(record.rows):
        if pcfg is not None:
            lo, hi = pcfg.alpha, pcfg.upper_bound
            if r.d_min < lo - 1e-12 or r.d_max > hi + 1e-12:
                out.append(f"row {i} (t={r.t}): sandwich violated, d_min={r.d_min!r} d_max={r.d_max!r} not in [{lo}, {hi}]")
        if not r.growth_ok:
            out.append(f"row {i} (t={r.t}): growth bound violated")
        if r.V_t < 0:
            out.append(f"row {i} (t={r.t}): negative V_t={r.V_t!r}")
        if r.phase == "sync":
            if r.V_t != 0.0:
                out.append(f"row {i} (t={r.t}): V_t={r.V_t!r} nonzero at sync")
            if record.consensus and record.consensus[i] != 0.0:
                out.append(f"row {i} (t={r.t}): workers disagree after sync by {record.consensus[i]!r}")
    return out


def cmd_check(config_path, out=None, seed=None) -> int:
    try:
        cfg = cfgmod.load_config(config_path)
        if seed is not None:
            cfg.seed = seed
        plan = cfgmod.make_plan(cfg)
        record = cfgmod.execute(plan)
    except ConfigurationError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    if out:
        _write_run(Path(out), plan, record, cfg.bounds)
    problems = find_violations(record, plan)
    for p in problems:
        print(p)
    if record.diverged_at is not None:
        print(record.status)
    print(f"checked {len(record.rows)} rows: {len(problems)} violation(s)")
    return EXIT_INVARIANT if problems else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="savic", description="Scaled Local SGD simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment (or a seed ensemble)")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1, help="ensemble members run concurrently")
    p.add_argument("--bounds", action="store_true", help="append the theory curve as a CSV column")

    p = sub.add_parser("sweep", help="sweep one parameter axis")
    p.add_argument("config")
    p.add_argument("--axis", required=True)
    p.add_argument("--values", required=True, help="comma separated")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("check", help="run and verify row-level invariants")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed, args.jobs, args.bounds)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.axis, args.values.split(","), args.out, args.seed, args.jobs)
    return cmd_check(args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
