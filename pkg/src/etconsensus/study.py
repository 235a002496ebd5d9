"""Run outputs, per-run checks and the two-graph reference study."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    FeasibilityReport,
    LyapunovParams,
    check_feasibility,
    consensus_metrics,
    derive_d_hat,
    grid_search,
    lyapunov_trace,
    tail_errors,
    threshold_margin,
)
from .config import Experiment, bundled_config_path, load
from .io import atomic_dir, read_csv, write_events, write_lyapunov, write_rows, write_summary, write_trajectory
from .plotting import DEFAULT_PLOTS, PlotSpec, plot_agent_comparison, render_run
from .simulator import DivergenceError, RunRecord, max_consecutive_fires, min_inter_event_gap, run

log = logging.getLogger(__name__)

# Frozen acceptance bounds.
TAIL_WINDOW = 3.0
POSITION_TOL = 0.05
VELOCITY_TOL = 0.1
MAX_TRIGGERED_FRACTION = 0.5
MAX_CONSECUTIVE_FIRES = 1000
MONOTONE_TOL = 1e-12
GAIN_RATE_TOL = 1e-3
LYAPUNOV_REL_TOL = 1e-6


@dataclass
class ExperimentManifest:
    name: str
    config_path: str
    outputs_dir: str
    plots: list[PlotSpec] = field(default_factory=lambda: list(DEFAULT_PLOTS))


def summary_rows(rec: RunRecord) -> list[dict]:
    m = consensus_metrics(rec)
    gaps = min_inter_event_gap(rec)
    runs = max_consecutive_fires(rec)
    return [
        {
            "agent_id": i + 1,
            "tail_position_error": float(m["tail_position_error"][i]),
            "tail_velocity_error": float(m["tail_velocity_error"][i]),
            "event_count": int(m["event_counts"][i]),
            "triggered_fraction": float(m["triggered_fraction"][i]),
            "min_inter_event_gap": gaps[i],
            "max_consecutive_fires": int(runs[i]),
            "final_gain": float(m["final_gain"][i]),
            "gain_bound": float(m["gain_bound"][i]),
            "tail_gain_rate": float(m["tail_gain_rate"][i]),
            "final_threshold": float(rec.d[-1, i]),
        }
        for i in range(rec.n_agents)
    ]


def first_feasible(exp: Experiment, jobs: int = 1) -> tuple[LyapunovParams | None, list[FeasibilityReport]]:
    """The configured Lyapunov set if it passes, else the first passing point of its grid."""
    if exp.lyapunov is None:
        return None, []
    sim = exp.sim
    base = check_feasibility(exp.lyapunov, sim.protocol, sim.topology, sim.d_initial)
    if base.passed:
        return exp.lyapunov, [base]
    reports = [base]
    if exp.grid:
        grid = grid_search(exp.lyapunov, sim.protocol, sim.topology, exp.grid, sim.d_initial, jobs=jobs)
        reports.extend(grid)
        names = list(exp.grid)
        for r in grid:
            if r.passed:
                return replace(exp.lyapunov, **{n: r.parameters[n] for n in names}), reports
    return None, reports


def run_checks(rec: RunRecord, exp: Experiment, jobs: int = 1) -> dict:
    """Everything the acceptance bounds are evaluated on, for one run."""
    ex, ev = tail_errors(rec, TAIL_WINDOW)
    steps = rec.n_steps
    counts = rec.event_counts()
    gaps = min_inter_event_gap(rec)
    tail = rec.times >= rec.times[-1] - TAIL_WINDOW - 1e-12
    cdot = np.abs(np.diff(rec.c[tail], axis=0)) / rec.h
    out = {
        "name": exp.name,
        "tail_position_error": ex,
        "tail_velocity_error": ev,
        "max_triggered_fraction": float(rec.triggered_fraction().max()),
        "max_event_count": int(counts.max()),
        "steps": steps,
        "min_gap": min((g for g in gaps if g is not None), default=None),
        "max_consecutive_fires": int(max_consecutive_fires(rec).max()),
        "max_threshold_increment": float(np.max(np.diff(rec.d, axis=0))) if len(rec.times) > 1 else 0.0,
        "gain_bound": float(np.abs(rec.c).max()),
        "tail_gain_rate": float(cdot.max()) if cdot.size else 0.0,
        "h": rec.h,
    }
    lyap, reports = first_feasible(exp, jobs)
    out["feasibility"] = reports
    out["lyapunov_params"] = lyap
    if lyap is not None:
        tr = lyapunov_trace(rec, lyap, exp.sim.protocol, exp.sim.topology, exp.sim.xi, exp.sim.d_initial, rel_tol=LYAPUNOV_REL_TOL)
        out["lyapunov"] = tr
        d_hat = lyap.d_hat if lyap.d_hat is not None else derive_d_hat(exp.sim.d_initial)
        out["threshold_margin_min"] = float(threshold_margin(rec.d, d_hat).min())
    return out


def verdicts(checks: dict) -> dict[str, bool | None]:
    lyap = checks.get("lyapunov")
    return {
        "tail position error < %.2g" % POSITION_TOL: checks["tail_position_error"] < POSITION_TOL,
        "tail velocity error < %.2g" % VELOCITY_TOL: checks["tail_velocity_error"] < VELOCITY_TOL,
        "triggered fraction < %.2g" % MAX_TRIGGERED_FRACTION: checks["max_triggered_fraction"] < MAX_TRIGGERED_FRACTION,
        "broadcasts < steps": checks["max_event_count"] < checks["steps"],
        "min inter-event gap >= h": checks["min_gap"] is None or checks["min_gap"] >= checks["h"] - 1e-12,
        "no run of > %d consecutive fires" % MAX_CONSECUTIVE_FIRES: checks["max_consecutive_fires"] <= MAX_CONSECUTIVE_FIRES,
        "thresholds non-increasing": checks["max_threshold_increment"] <= MONOTONE_TOL,
        "tail max |dc/dt| < %.0e" % GAIN_RATE_TOL: bool(np.isfinite(checks["gain_bound"]))
        and checks["tail_gain_rate"] < GAIN_RATE_TOL,
        "Lyapunov descent (feasible set)": None if lyap is None else lyap.monotone,
    }


def write_run_outputs(
    outdir: Path, rec: RunRecord, exp: Experiment, config_path: str, stride: int = 1, jobs: int = 1
) -> dict:
    write_trajectory(outdir / "trajectory.csv", rec, stride)
    write_events(outdir / "events.csv", rec)
    write_summary(outdir / "summary.csv", summary_rows(rec))
    checks = None
    if rec.completed:
        checks = run_checks(rec, exp, jobs)
        if checks["feasibility"]:
            write_rows(outdir / "feasibility_report.csv", [r.row() for r in checks["feasibility"]])
        if "lyapunov" in checks:
            write_lyapunov(outdir / "lyapunov.csv", rec.times, checks["lyapunov"].V)
    render_run(outdir)
    em = ExperimentManifest(exp.name, str(config_path), str(outdir))
    manifest = {
        "name": em.name,
        "config_path": em.config_path,
        "plots": [{"file": f"{p.name}.svg", "column": p.column, "ylabel": p.ylabel} for p in em.plots],
        "config": exp.raw,
        "seed": rec.seed,
        "rng": rec.rng,
        "completed": rec.completed,
        "steps": rec.n_steps,
        "stride": stride,
        "version": __version__,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return {"checks": checks}


def execute(exp: Experiment, config_path: str, outdir: Path, stride: int = 1, jobs: int = 1):
    """Simulate and write every output atomically; returns (record, checks, diverged)."""
    diverged = False
    with atomic_dir(outdir) as tmp:
        t0 = time.perf_counter()
        try:
            rec = run(exp.sim)
        except DivergenceError as exc:
            log.error("%s", exc)
            rec, diverged = exc.record, True
        elapsed = time.perf_counter() - t0
        res = write_run_outputs(tmp, rec, exp, config_path, stride, jobs)
    if res["checks"] is not None:
        res["checks"]["runtime"] = elapsed
    return rec, res["checks"], diverged


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def reference_study(outdir: Path, stride: int = 1, jobs: int = 1) -> tuple[bool, list[dict], dict]:
    """Run both bundled graphs with one parameter set and write the combined report.

    Returns (both runs completed, verdict rows, {graph: (checks, verdicts)}).  Failed
    criteria are reported, not raised.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows, table, diverged = [], {}, False
    for name in ("g1", "g2"):
        path = bundled_config_path(name)
        exp = load(path)
        rec, checks, div = execute(exp, str(path), outdir / name, stride, jobs)
        diverged |= div
        if checks is None:
            continue
        table[name] = (checks, verdicts(checks))
        for crit, ok in table[name][1].items():
            rows.append({"graph": name, "criterion": crit, "verdict": "n/a" if ok is None else ("pass" if ok else "fail")})

    trajs = {n.upper(): read_csv(outdir / n / "trajectory.csv") for n in ("g1", "g2") if (outdir / n).exists()}
    if trajs:
        plot_agent_comparison(trajs, "d", 1, r"$d_1(t)$", "Threshold of agent 1 under both graphs", outdir / "threshold_agent1.svg")
        plot_agent_comparison(trajs, "c", 1, r"$c_1(t)$", "Coupling gain of agent 1 under both graphs", outdir / "gain_agent1.svg")
    if rows:
        write_rows(outdir / "reference_study.csv", rows)
    _write_report(outdir / "report.md", table)
    return not diverged, rows, table


def _write_report(path: Path, table: dict) -> None:
    lines = ["# Reference study: graphs G1 and G2, identical parameters", ""]
    for name, (checks, verdict) in table.items():
        lines += [f"## {name.upper()}", ""]
        lines.append(f"- tail |x_i - x_0| (last {TAIL_WINDOW:g} s): {_fmt(checks['tail_position_error'])}")
        lines.append(f"- tail |v_i - v_0| (last {TAIL_WINDOW:g} s): {_fmt(checks['tail_velocity_error'])}")
        lines.append(f"- simulation time: {checks['runtime']:.1f} s")
        lines.append(f"- max triggered fraction: {_fmt(checks['max_triggered_fraction'])}")
        lines.append(f"- max broadcasts per agent: {checks['max_event_count']} of {checks['steps']} steps")
        lines.append(f"- min inter-event gap: {_fmt(checks['min_gap'])} s")
        lines.append(f"- max |c_i|: {_fmt(checks['gain_bound'])}, tail max |dc/dt|: {_fmt(checks['tail_gain_rate'])}")
        base = checks["feasibility"][0] if checks["feasibility"] else None
        if base is not None:
            lines.append(
                f"- configured Lyapunov set: lambda_max(Pi) = {_fmt(base.lambda_max_pi)}, "
                f"lambda_min(Omega) = {_fmt(base.lambda_min_omega)}, verdict {'pass' if base.passed else 'fail'}"
                + (f" ({'; '.join(base.violations)})" if base.violations else "")
            )
        lp = checks["lyapunov_params"]
        if lp is not None:
            tr = checks["lyapunov"]
            lines.append(
                f"- Lyapunov trace with omega = {lp.omega:g}: {tr.violations.size} increases beyond tol outside "
                f"event steps, {tr.transient_increases.size} at event steps; min threshold margin "
                f"{_fmt(checks['threshold_margin_min'])}"
            )
        lines += ["", "| criterion | verdict |", "|---|---|"]
        for crit, ok in verdict.items():
            cell = crit.replace("|", "\\|")
            lines.append(f"| {cell} | {'n/a' if ok is None else ('pass' if ok else 'FAIL')} |")
        lines.append("")
    path.write_text("\n".join(lines))
