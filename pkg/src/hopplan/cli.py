"""Command-line front end: plan, check, and bench.

Exit codes: 0 success, 2 configuration or dimension error, 3 solve
failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
from dataclasses import replace

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, DimensionError, HopplanError
from .pipeline import PlanResult, plan_full_only, plan_hierarchical, verify
from .trajio import load_trajectory, save_trajectory

log = logging.getLogger("hopplan")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVE = 3
EXIT_VERIFY = 4


def _solver_options(cfg: RunConfig, out_dir: str, label: str):
    return replace(cfg.solver,
                   log_path=os.path.join(out_dir, f"solve_{label}.tsv"))


def _write_outputs(result: PlanResult, cfg: RunConfig, out_dir: str) -> None:
    save_trajectory(
        os.path.join(out_dir, "trajectory.csv"), result.phase2_traj,
        cfg.model, cfg.terrain, cfg.task,
        meta_extra={
            "config_hash": cfg.config_hash,
            "family": cfg.task.family,
            "seed": cfg.seed,
            "solver_summary": _summaries(result),
        })
    if result.phase1_traj is not None:
        save_trajectory(
            os.path.join(out_dir, "phase1_trajectory.csv"), result.phase1_traj,
            cfg.model, cfg.terrain, cfg.task,
            meta_extra={"config_hash": cfg.config_hash, "phase": "centroidal"})
    with open(os.path.join(out_dir, "verification.txt"), "w") as fh:
        fh.write(str(result.verification) + "\n")


def _summaries(result: PlanResult) -> dict:
    out = {}
    for label, rep in (("phase1", result.phase1_report),
                       ("phase2", result.phase2_report)):
        if rep is None:
            continue
        out[label] = {
            "status": rep.status,
            "cost": rep.cost,
            "iterations": rep.iterations,
            "wall_time": rep.wall_time,
            "kkt": [rep.kkt_stationarity, rep.kkt_feasibility,
                    rep.kkt_complementarity],
        }
    return out


def cmd_plan(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    planner = plan_full_only if args.full_only else plan_hierarchical
    label = "full_only" if args.full_only else "hierarchical"
    log.info("planning (%s) from %s", label, args.config)
    result = planner(cfg.model, cfg.terrain, cfg.task,
                     _solver_options(cfg, out_dir, label))
    for note in result.notes:
        log.warning("%s", note)
    if not result.ok:
        log.error("solve failed: %s",
                  result.phase2_report.status if result.phase2_report else "?")
        return EXIT_SOLVE
    _write_outputs(result, cfg, out_dir)
    tol = 10.0 * cfg.solver.kkt_tol
    if not result.verification.passes(tol):
        worst = result.verification.worst_family()
        log.error("verification failed: %s exceeds %.1e", worst, tol)
        return EXIT_VERIFY
    log.info("plan written to %s (cost %.6g, %.1f s)", out_dir,
             result.cost, result.wall_time)
    return EXIT_OK


def cmd_check(args) -> int:
    try:
        cfg = load_config(args.config)
        _, traj, _ = load_trajectory(args.trajectory, cfg.model)
        report = verify(traj, cfg.model, cfg.terrain, cfg.task, "full")
    except (ConfigError, DimensionError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    print(report)
    tol = 10.0 * cfg.solver.kkt_tol
    bad = report.violating(tol)
    if bad:
        worst = max(bad, key=lambda f: f.max_abs)
        log.error("violation: %s family at knot %d (%.3e > %.1e)",
                  worst.family, worst.argmax_knot, worst.max_abs, tol)
        return EXIT_VERIFY
    return EXIT_OK


def _bench_one(path: str):
    cfg = load_config(path)
    hier = plan_hierarchical(cfg.model, cfg.terrain, cfg.task, cfg.solver)
    full = plan_full_only(cfg.model, cfg.terrain, cfg.task, cfg.solver)
    return cfg, hier, full


def _reduction(baseline: float, candidate: float) -> float:
    if baseline == 0:
        return 0.0
    return (baseline - candidate) / baseline * 100.0


def cmd_bench(args) -> int:
    try:
        paths = sorted(
            os.path.join(args.config_dir, f)
            for f in os.listdir(args.config_dir)
            if f.endswith((".yaml", ".yml")))
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    if not paths:
        log.error("no config files in %s", args.config_dir)
        return EXIT_CONFIG
    rows = []
    failed = False
    for path in paths:
        name = os.path.basename(path)
        try:
            cfg, hier, full = _bench_one(path)
        except HopplanError as exc:
            log.error("%s: %s", name, exc)
            rows.append((name, "?", None))
            failed = True
            continue
        if not (hier.ok and full.ok):
            log.warning("%s: hierarchical %s, full-only %s", name,
                        "ok" if hier.ok else "failed",
                        "ok" if full.ok else "failed")
            rows.append((name, cfg.task.family, None))
            failed = True
            continue
        rows.append((name, cfg.task.family, dict(
            time_red=_reduction(full.wall_time, hier.wall_time),
            cost_red=_reduction(full.cost, hier.cost),
            hier_cost=hier.cost, full_cost=full.cost,
            hier_time=hier.wall_time, full_time=full.wall_time)))
        log.info("%s: time %.1fs vs %.1fs, cost %.4g vs %.4g", name,
                 rows[-1][2]["hier_time"], rows[-1][2]["full_time"],
                 rows[-1][2]["hier_cost"], rows[-1][2]["full_cost"])

    families = {}
    for name, family, stats in rows:
        if stats is not None:
            families.setdefault(family, []).append(stats)

    lines = []
    lines.append(f"{'':16s}{'Time reduction [%]':>24s}  {'Cost reduction [%]':>24s}")
    lines.append(f"{'Task':<16s}{'Md.':>12s}{'Av.':>12s}  {'Md.':>12s}{'Av.':>12s}")
    csv_lines = ["task,time_reduction_median,time_reduction_average,"
                 "cost_reduction_median,cost_reduction_average,trials"]
    for family in sorted(families):
        stats = families[family]
        tr = [s["time_red"] for s in stats]
        cr = [s["cost_red"] for s in stats]
        lines.append(f"{family:<16s}{statistics.median(tr):>12.2f}"
                     f"{statistics.mean(tr):>12.2f}  "
                     f"{statistics.median(cr):>12.2f}{statistics.mean(cr):>12.2f}")
        csv_lines.append(f"{family},{statistics.median(tr):.4f},"
                         f"{statistics.mean(tr):.4f},{statistics.median(cr):.4f},"
                         f"{statistics.mean(cr):.4f},{len(stats)}")
    for name, family, stats in rows:
        if stats is None:
            lines.append(f"{name:<16s}{'failed':>12s}")
    table = "\n".join(lines)
    print(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "bench.txt"), "w") as fh:
            fh.write(table + "\n")
        with open(os.path.join(args.out, "bench.csv"), "w") as fh:
            fh.write("\n".join(csv_lines) + "\n")
        with open(os.path.join(args.out, "bench_trials.json"), "w") as fh:
            json.dump([{"config": n, "family": f, **(s or {"failed": True})}
                       for n, f, s in rows], fh, indent=2)
    return EXIT_SOLVE if failed else EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hopplan",
        description="Contact-implicit jump planning for a planar hopping leg")
    parser.add_argument("--log-level",
                        default=os.environ.get("HOPPLAN_LOG_LEVEL", "INFO"))
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="solve a planning task")
    p_plan.add_argument("config")
    p_plan.add_argument("--full-only", action="store_true",
                        help="skip the centroidal phase (baseline)")
    p_plan.add_argument("--seed", type=int, default=None)
    p_plan.add_argument("--out", default=None)
    p_plan.set_defaults(func=cmd_plan)

    p_check = sub.add_parser("check", help="verify a trajectory file")
    p_check.add_argument("trajectory")
    p_check.add_argument("config")
    p_check.set_defaults(func=cmd_check)

    p_bench = sub.add_parser("bench",
                             help="hierarchical vs full-only comparison table")
    p_bench.add_argument("config_dir")
    p_bench.add_argument("--out", default=None)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except HopplanError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
