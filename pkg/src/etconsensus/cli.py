"""Command line entry point: ``etconsensus {run,feasibility,reference-study,plot}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .analysis import check_feasibility, grid_search
from .config import BUNDLED, bundled_config_path, load
from .io import write_rows
from .plotting import render_run
from .simulator import ConfigError
from .study import execute, reference_study, verdicts

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_INFEASIBLE = 4

log = logging.getLogger("etconsensus")


def _config_path(arg: str) -> Path:
    """A file path, or the name of a bundled config (g1, g2)."""
    if arg in BUNDLED:
        return bundled_config_path(arg)
    return Path(arg)


def _overrides(args) -> list[str]:
    out = list(args.override or [])
    if getattr(args, "seed", None) is not None:
        out.append(f"init.seed={args.seed}")
    return out


def _parse_grid(items: list[str] | None) -> dict[str, list[float]]:
    grid = {}
    for item in items or []:
        name, _, values = item.partition("=")
        if not values:
            raise ConfigError(f"--grid {item!r} is not of the form name=v1,v2,...")
        try:
            grid[name.strip()] = [float(v) for v in values.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"--grid {item!r}: {exc}") from exc
    return grid


def cmd_run(args) -> int:
    path = _config_path(args.config)
    exp = load(path, _overrides(args))
    out = Path(args.out)
    t0 = time.perf_counter()
    rec, checks, diverged = execute(exp, str(path), out, stride=args.stride, jobs=args.jobs)
    print(f"{exp.name}: {rec.n_steps} steps in {time.perf_counter() - t0:.1f} s, outputs in {out}")
    if diverged:
        print(f"diverged at t = {rec.times[-1]:.6g}; partial outputs written", file=sys.stderr)
        return EXIT_DIVERGED
    if checks is not None:
        for crit, ok in verdicts(checks).items():
            print(f"  {'n/a ' if ok is None else ('pass' if ok else 'FAIL')}  {crit}")
    return EXIT_OK


def cmd_feasibility(args) -> int:
    path = _config_path(args.config)
    exp = load(path, _overrides(args))
    if exp.lyapunov is None:
        raise ConfigError(f"{path}: no [lyapunov] section")
    sim = exp.sim
    grid = _parse_grid(args.grid)
    if args.use_config_grid and not grid:
        grid = exp.grid
    if grid:
        unknown = set(grid) - {"mu", "varpi", "eta", "omega"}
        if unknown:
            raise ConfigError(f"--grid: unknown parameter(s) {sorted(unknown)}")
        reports = grid_search(exp.lyapunov, sim.protocol, sim.topology, grid, sim.d_initial, jobs=args.jobs)
    else:
        reports = [check_feasibility(exp.lyapunov, sim.protocol, sim.topology, sim.d_initial)]
    rows = [r.row() for r in reports]
    for r in reports:
        params = " ".join(f"{k}={v:g}" for k, v in r.parameters.items())
        print(
            f"{'pass' if r.passed else 'FAIL'}  {params}  lambda_min(Omega)={r.lambda_min_omega:.6g} "
            f"lambda_max(Pi)={r.lambda_max_pi:.6g}"
        )
        for v in r.violations:
            print(f"      violation: {v}")
        for w in r.warnings:
            print(f"      warning: {w}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_rows(out / "feasibility_report.csv", rows)
    # a grid passes when at least one point does
    return EXIT_OK if any(r.passed for r in reports) else EXIT_INFEASIBLE


def cmd_reference_study(args) -> int:
    out = Path(args.out)
    t0 = time.perf_counter()
    completed, rows, _ = reference_study(out, stride=args.stride, jobs=args.jobs)
    for r in rows:
        print(f"{r['graph']}  {r['verdict']:4s}  {r['criterion']}")
    print(f"reference study finished in {time.perf_counter() - t0:.1f} s, report at {out / 'report.md'}")
    # criteria verdicts live in the report; the exit status only reflects whether both runs completed
    return EXIT_OK if completed else EXIT_DIVERGED


def cmd_plot(args) -> int:
    out = Path(args.out)
    if not (out / "trajectory.csv").exists():
        raise ConfigError(f"{out}: no trajectory.csv to plot")
    for p in render_run(out):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="etconsensus", description="Event-triggered leader-following consensus simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="config file, or a bundled name (g1, g2)")
            p.add_argument("--seed", type=int, help="shorthand for --override init.seed=N")
            p.add_argument("--override", action="append", metavar="KEY=VALUE", help="dotted config key (repeatable)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for feasibility grids")

    p = sub.add_parser("run", help="simulate one config and write CSVs and SVGs")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=1, help="write every k-th step to trajectory.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("feasibility", help="check Omega > 0 and Pi < 0 for the [lyapunov] section")
    common(p)
    p.add_argument("--out", help="directory for feasibility_report.csv")
    p.add_argument("--grid", action="append", metavar="NAME=V1,V2", help="sweep a Lyapunov parameter (repeatable)")
    p.add_argument("--use-config-grid", action="store_true", help="sweep the grid stored in the config")
    p.set_defaults(func=cmd_feasibility)

    p = sub.add_parser("reference-study", help="run both bundled graphs and write a combined report")
    common(p, config=False)
    p.add_argument("--out", default="reference_study")
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_reference_study)

    p = sub.add_parser("plot", help="rebuild the SVGs of a run directory from its CSVs")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "stride", 1) < 1:
        print("error: --stride must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
