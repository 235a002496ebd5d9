"""Acceptance criteria, each at its stated tolerance.  Every test prints one PASS/FAIL line.

The reference study (both bundled graphs, identical parameters) runs once per session.
"""

import numpy as np
import pytest

from etconsensus.cli import main
from etconsensus.dynamics import pendulum
from etconsensus.protocol import ProtocolParams
from etconsensus.simulator import InitialConditions, SimConfig, rk4_step, run
from etconsensus.study import MAX_CONSECUTIVE_FIRES, reference_study
from etconsensus.topology import build_topology, spectral_certificate

from conftest import ACCEPTANCE_LINES
from oracles import compact_rates, per_agent_rates, random_topology


def report(num: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="module")
def study(tmp_path_factory):
    out = tmp_path_factory.mktemp("reference_study")
    completed, _, table = reference_study(out)
    assert completed, "a reference run diverged"
    return {name: checks for name, (checks, _) in table.items()}


def _tracking(study, name, num, title):
    c = study[name]
    ok = c["tail_position_error"] < 0.05 and c["tail_velocity_error"] < 0.1 and c["runtime"] < 60
    detail = (
        f"max|x_i-x_0| = {c['tail_position_error']:.4g} (< 0.05), max|v_i-v_0| = {c['tail_velocity_error']:.4g} "
        f"(< 0.1) over the last 3 s; simulation {c['runtime']:.1f} s (< 60)"
    )
    report(num, title, ok, detail)
    assert ok, detail


def test_01_tracking_g1(study):
    _tracking(study, "g1", 1, "tracking on G1")


def test_02_tracking_g2_without_retuning(study):
    _tracking(study, "g2", 2, "tracking on G2, same parameters")


def test_03_event_saving(study):
    parts, ok = [], True
    for name, c in study.items():
        good = c["max_triggered_fraction"] < 0.5 and c["max_event_count"] < c["steps"]
        ok &= good
        parts.append(f"{name}: fraction {c['max_triggered_fraction']:.3g}, broadcasts {c['max_event_count']}/{c['steps']}")
    report(3, "event saving", ok, "; ".join(parts))
    assert ok


def test_04_no_zeno(study):
    parts, ok = [], True
    for name, c in study.items():
        gap_ok = c["min_gap"] is None or c["min_gap"] >= c["h"] - 1e-12
        good = gap_ok and np.isfinite(c["max_event_count"]) and c["max_consecutive_fires"] <= MAX_CONSECUTIVE_FIRES
        ok &= good
        gap = "n/a" if c["min_gap"] is None else f"{c['min_gap']:.4g}"
        parts.append(f"{name}: min gap {gap} s, longest firing run {c['max_consecutive_fires']}")
    # at exact consensus the guard must keep every agent silent
    topo = build_topology(np.array([[0.0, 1.0], [1.0, 0.0]]), [1.0, 0.0])
    eq = SimConfig(
        topo, pendulum(), ProtocolParams(1.0, 30.0, 35.0, 13.67), [0.5, 0.2], t_end=2.0,
        init=InitialConditions(x=[0.0, 0.0], v=[0.0, 0.0], x0=0.0, v0=0.0),
    )
    rec = run(eq)
    quiet = rec.event_counts().tolist() == [1, 1]
    ok &= quiet
    parts.append(f"equilibrium run: broadcasts {rec.event_counts().tolist()} (initial only)")
    report(4, "no Zeno behaviour", ok, "; ".join(parts))
    assert ok


def test_05_threshold_monotone(study):
    topo = build_topology(np.array([[0.0, 1.0], [1.0, 0.0]]), [1.0, 0.0])
    extra = run(SimConfig(topo, pendulum(), ProtocolParams(1.0, 30.0, 35.0, 13.67), [0.5, 0.2], t_end=2.0,
                          init=InitialConditions(seed=3), trigger_mode="every_step"))
    incs = {name: c["max_threshold_increment"] for name, c in study.items()}
    incs["pair, every step"] = float(np.max(np.diff(extra.d, axis=0)))
    ok = all(v <= 1e-12 for v in incs.values())
    report(5, "thresholds non-increasing", ok, ", ".join(f"{k}: max increment {v:.3g}" for k, v in incs.items()))
    assert ok


def test_06_gain_convergence(study):
    parts, ok = [], True
    for name, c in study.items():
        good = np.isfinite(c["gain_bound"]) and c["tail_gain_rate"] < 1e-3
        ok &= good
        parts.append(f"{name}: max|c| {c['gain_bound']:.4g}, tail max|dc/dt| {c['tail_gain_rate']:.4g} (< 1e-3)")
    report(6, "gain convergence", ok, "; ".join(parts))
    assert ok


def test_07_lyapunov_descent(study):
    parts, ok, checked = [], True, 0
    for name, c in study.items():
        lp = c["lyapunov_params"]
        if lp is None:
            parts.append(f"{name}: no feasible parameter set in the grid")
            continue
        checked += 1
        tr = c["lyapunov"]
        ok &= tr.monotone
        parts.append(
            f"{name} (omega={lp.omega:g}): {tr.violations.size} increases > {tr.tol:.3g} outside event steps, "
            f"min threshold margin {c['threshold_margin_min']:.4g}"
        )
    ok &= checked > 0
    report(7, "Lyapunov descent on feasible sets", ok, "; ".join(parts))
    assert ok


def test_08_graph_properties():
    rng = np.random.default_rng(2024)
    bad = []
    for _ in range(200):
        n = int(rng.integers(1, 9))
        topo = random_topology(rng, n)
        f = spectral_certificate(topo)
        good = (
            np.abs(topo.laplacian.sum(axis=1)).max() < 1e-12
            and f.connected
            and f.simple_zero_eigenvalue
            and (n == 1 or f.laplacian_eigenvalues[1] > 0)
            and f.h_positive_definite
        )
        if not good:
            bad.append(("connected", n))
    for _ in range(50):
        n = int(rng.integers(2, 9))
        cut = int(rng.integers(1, n))
        W = np.triu(rng.uniform(0.2, 3.0, (n, n)) * (rng.random((n, n)) < 0.6), 1)
        W = W + W.T
        W[:cut, cut:] = W[cut:, :cut] = 0.0
        K = np.zeros(n)
        K[rng.integers(0, n)] = 1.0
        f = spectral_certificate(build_topology(W, K))
        if f.connected or f.zero_eigenvalue_count < 2:
            bad.append(("disconnected", n))
    ok = not bad
    report(8, "graph spectral properties", ok, f"200 connected + 50 disconnected graphs, {len(bad)} mismatches")
    assert ok, bad


def test_09_compact_form():
    rng = np.random.default_rng(99)
    params = ProtocolParams(1.0, 30.0, 35.0, 13.67)
    model = pendulum()
    worst = 0.0
    for _ in range(100):
        N = int(rng.integers(1, 5))
        topo = random_topology(rng, N)
        x, v, w, xb = (rng.uniform(-2, 2, N) for _ in range(4))
        c = rng.uniform(0, 5, N)
        x0, v0 = rng.uniform(-2, 2, 2)
        a = per_agent_rates(topo, model, params, x, v, w, c, xb, x0, v0)
        b = compact_rates(topo, model, params, x, v, w, c, xb, x0, v0)
        worst = max(worst, float(np.abs(a - b).max()))
    ok = worst <= 1e-10
    report(9, "per-agent vs compact matrix form", ok, f"max deviation {worst:.3g} over 100 states (<= 1e-10)")
    assert ok


def test_10_rk4_order():
    model = pendulum()

    def rhs(t, y):
        return np.array([y[1], model.eval(t, y[:1], y[1:])[0]])

    def solve(h, T=2.0):
        y = np.array([1.0, 0.0])
        for k in range(int(round(T / h))):
            y = rk4_step(rhs, k * h, y, h)
        return y

    ref = solve(1e-4)
    hs = np.array([0.1, 0.05, 0.025, 0.0125])
    errs = np.array([np.abs(solve(h) - ref).max() for h in hs])
    slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    ok = slope >= 3.5
    report(10, "RK4 convergence order", ok, f"slope {slope:.3f} (>= 3.5)")
    assert ok


def test_11_determinism(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--config", "g1", "--out", str(tmp_path / d)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    same = [n for n in names if (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()]
    ok = bool(names) and same == names
    report(11, "byte-identical reruns", ok, f"{len(same)}/{len(names)} CSV files identical ({', '.join(names)})")
    assert ok
