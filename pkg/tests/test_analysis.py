import numpy as np
import pytest

from etconsensus.analysis import (
    LyapunovParams,
    assemble_omega,
    assemble_pi,
    check_feasibility,
    consensus_metrics,
    derive_d_hat,
    grid_search,
    kappa,
    lyapunov_trace,
    omega_core,
    parameter_violations,
    pi_blocks,
    threshold_margin,
)
from etconsensus.protocol import ProtocolParams
from etconsensus.simulator import RunRecord
from etconsensus.topology import build_topology

from oracles import random_topology

REF = ProtocolParams(alpha=1.0, beta=30.0, gamma=35.0, delta=13.67)


def ref_params(topo, **kw):
    N = topo.n_followers
    base = dict(
        mu=2.0, varpi=1.5, eta=20.5, omega=40.0, delta_d=0.5 * np.eye(N), varsigma=-0.5, rho=-2.0,
    )
    base.update(kw)
    if "c_hat" not in base:
        base["c_hat"] = np.linalg.inv(topo.h_matrix) / 20
    return LyapunovParams(**base)


def pi_entrywise(p, prm, topo):
    """Pi rebuilt one scalar entry at a time from the printed block formulas."""
    N = topo.n_followers
    H, C, D = topo.h_matrix, np.asarray(p.c_hat), np.asarray(p.delta_d)
    a, b, g = prm.alpha, prm.beta, prm.gamma
    mu, vp, eta, om, vs = p.mu, p.varpi, p.eta, p.omega, p.varsigma
    k = max(p.rho * (vp + eta / 2 + a / (2 * b)), eta / 2, a / (2 * b))

    def CH(i, j):
        return sum(C[i, m] * H[m, j] for m in range(N))

    def DH2(i, j):
        return sum(D[i, m] * H[m, l] * H[l, j] for m in range(N) for l in range(N))

    def eye(i, j):
        return 1.0 if i == j else 0.0

    def upper(r, c, i, j):
        if (r, c) == (0, 0):
            return vp * (a - b) * CH(i, j) + k * eye(i, j) - om * DH2(i, j)
        if (r, c) == (0, 1):
            return (mu / 2 - vp * vs / 2) * eye(i, j)
        if (r, c) == (0, 2):
            return vp * (a - g) / 2 * eye(i, j) + (a * a - b * b) / (2 * b) * eta * CH(i, j)
        if (r, c) == (1, 1):
            return (-vp + vs * eta + k) * eye(i, j)
        if (r, c) == (1, 2):
            return (-a * eta + vp / 2 + a * g * eta / (2 * b) - vs * a / (2 * b)) * eye(i, j)
        if (r, c) == (2, 2):
            return (a * a * eta / b - g * eta + k) * eye(i, j)
        if (r, c) == (0, 3):
            return vp * (a - b) * CH(i, j) - om * DH2(i, j)
        if (r, c) == (1, 3):
            return 0.0
        if (r, c) == (2, 3):
            return (a * a - b * b) / b * eta * CH(i, j)
        if (r, c) == (3, 3):
            return -om * (eye(i, j) + DH2(i, j))
        raise AssertionError

    P = np.zeros((4 * N, 4 * N))
    for r in range(4):
        for c in range(4):
            for i in range(N):
                for j in range(N):
                    if r == c:
                        val = 0.5 * (upper(r, c, i, j) + upper(r, c, j, i))
                    elif r < c:
                        val = upper(r, c, i, j)
                    else:
                        val = upper(c, r, j, i)
                    P[r * N + i, c * N + j] = val
    return P


def test_pi_matches_entrywise_construction(g1, g2):
    for exp in (g1, g2):
        topo = exp.sim.topology
        p = ref_params(topo)
        Pi, lam = assemble_pi(p, REF, topo)
        np.testing.assert_allclose(Pi, pi_entrywise(p, REF, topo), atol=1e-12, rtol=0)
        assert np.abs(Pi - Pi.T).max() < 1e-12
        assert lam == pytest.approx(np.linalg.eigvalsh(Pi)[-1])


@pytest.mark.parametrize("seed", range(5))
def test_pi_matches_entrywise_random_graphs(seed):
    rng = np.random.default_rng(seed)
    topo = random_topology(rng, int(rng.integers(1, 6)))
    N = topo.n_followers
    p = ref_params(
        topo, c_hat=np.diag(rng.uniform(0.1, 1, N)), delta_d=np.diag(rng.uniform(0.1, 1, N)),
        varsigma=rng.normal(), rho=rng.normal(),
    )
    prm = ProtocolParams(*rng.uniform(0.5, 40, 4))
    np.testing.assert_allclose(assemble_pi(p, prm, topo)[0], pi_entrywise(p, prm, topo), atol=1e-10, rtol=1e-12)


def test_kappa_formula():
    assert kappa(-2.0, 1.5, 20.5, 1.0, 30.0) == pytest.approx(10.25)
    assert kappa(1.0, 1.0, 2.0, 1.0, 1.0) == pytest.approx(2.5)


def test_omega_degenerate_block():
    p = LyapunovParams(mu=1.0, varpi=0.0, eta=4.0, omega=1.0, c_hat=np.eye(1), delta_d=np.eye(1), varsigma=0, rho=0)
    prm = ProtocolParams(alpha=1.0, beta=2.0, gamma=1.0, delta=1.0)
    np.testing.assert_array_equal(assemble_omega(p, prm, 1), [[1, 0, 0], [0, 4, -2], [0, -2, 4]])


@pytest.mark.parametrize("N", range(1, 9))
def test_omega_kronecker_multiplicity(N):
    p = LyapunovParams(2.0, 1.5, 20.5, 40.0, np.eye(N), np.eye(N), -0.5, -2.0)
    core = np.linalg.eigvalsh(omega_core(p, REF))
    full = np.linalg.eigvalsh(assemble_omega(p, REF, N))
    np.testing.assert_allclose(full, np.repeat(core, N), rtol=1e-12)


def test_reference_omega_positive(g1):
    p = ref_params(g1.sim.topology)
    Om = assemble_omega(p, REF, 6)
    assert Om.shape == (18, 18) and np.linalg.eigvalsh(Om)[0] > 0


def test_doubling_omega_halves_pi22(g1):
    topo = g1.sim.topology
    lam = []
    for om in (40.0, 80.0):
        lam.append(np.linalg.eigvalsh(pi_blocks(ref_params(topo, omega=om), REF, topo)["44"])[-1])
    assert lam[0] < 0 and lam[1] <= 2 * lam[0]


def test_reference_feasibility_is_reported(g1):
    rep = check_feasibility(ref_params(g1.sim.topology), REF, g1.sim.topology)
    assert rep.lambda_min_omega > 0
    # the reference set does not make Pi negative definite on G1; the report must say why
    assert not rep.passed
    assert any("Pi11" in v for v in rep.violations)
    row = rep.row()
    assert row["verdict"] == "fail" and row["lambda_max_Pi"] == rep.lambda_max_pi


def test_zero_varpi_and_eta_fail(g1):
    rep = check_feasibility(ref_params(g1.sim.topology, varpi=0.0, eta=0.0), REF, g1.sim.topology)
    assert not rep.passed
    assert any("varpi" in v for v in rep.violations)


def test_singular_h_fails_precheck():
    W = np.zeros((3, 3))
    W[0, 1] = W[1, 0] = 1.0
    topo = build_topology(W, [1.0, 0.0, 0.0])  # agent 3 is isolated and cannot hear the leader
    rep = check_feasibility(ref_params(topo, c_hat=np.eye(3) / 20), REF, topo)
    assert not rep.passed and "H is not positive definite" in rep.violations[0]
    assert np.isnan(rep.lambda_max_pi)


def test_grid_search_rows_and_parallel_agree(g1):
    topo = g1.sim.topology
    grid = {"omega": [10.0, 20.0, 40.0, 80.0]}
    serial = grid_search(ref_params(topo), REF, topo, grid)
    parallel = grid_search(ref_params(topo), REF, topo, grid, jobs=2)
    assert len(serial) == 4
    assert [r.parameters["omega"] for r in serial] == grid["omega"]
    assert [r.lambda_max_pi for r in serial] == [r.lambda_max_pi for r in parallel]


def test_large_omega_is_feasible_on_g1(g1):
    topo = g1.sim.topology
    assert check_feasibility(ref_params(topo, omega=1280.0), REF, topo).passed


def test_parameter_side_conditions(g1):
    topo = g1.sim.topology
    warn = parameter_violations(ref_params(topo), REF)
    assert any("mu >> varpi" in w for w in warn)
    assert any("rho" in w for w in warn)
    assert not any("eta/varpi" in w for w in warn)  # 20.5 / 1.5 = 13.667
    assert any("eta/varpi" in w for w in parameter_violations(ref_params(topo, eta=30.0), REF))


def test_d_hat_and_margin():
    np.testing.assert_array_equal(derive_d_hat([1.0, -0.5]), [2.0, 1.0])
    d = np.array([[1.0, -0.5], [0.5, -1.0], [-3.0, 0.0]])
    m = threshold_margin(d, [2.0, 1.0])
    np.testing.assert_array_equal(m, [[2.0, 0.0], [2.0, -1.0], [-4.0, 1.0]])


def _record(x, v, w, c, d, x0=None):
    T, N = c.shape
    x0 = np.zeros((T, 1)) if x0 is None else x0
    return RunRecord(
        times=np.arange(T) * 0.01, x=x, v=v, w=w, u=np.zeros_like(x), c=c, d=d, x0=x0, v0=np.zeros((T, 1)),
        x_broadcast=x.copy(), fired=np.zeros((T, N), dtype=bool), events=[], h=0.01,
    )


def test_lyapunov_zero_at_equilibrium(pair):
    p = ref_params(pair, c_hat=np.diag([0.3, 0.7]), d_hat=np.array([2.0, 2.0]))
    T = 5
    z = np.zeros((T, 2, 1))
    rec = _record(z, z, z, np.tile([0.3, 0.7], (T, 1)), np.full((T, 2), -2.0))
    tr = lyapunov_trace(rec, p, REF, pair, xi=[0.5, 0.2])
    np.testing.assert_array_equal(tr.V, 0.0)
    assert tr.monotone


def test_lyapunov_quadratic_scales_by_four(pair):
    p = ref_params(pair, c_hat=np.diag([0.3, 0.7]), d_hat=np.array([2.0, 2.0]))
    rng = np.random.default_rng(1)
    x, v, w = (rng.normal(size=(3, 2, 1)) for _ in range(3))
    c = np.tile([0.3, 0.7], (3, 1))
    d = np.full((3, 2), -2.0)
    one = lyapunov_trace(_record(x, v, w, c, d), p, REF, pair, xi=[0.5, 0.2])
    two = lyapunov_trace(_record(2 * x, 2 * v, 2 * w, c, d), p, REF, pair, xi=[0.5, 0.2])
    np.testing.assert_allclose(two.quadratic, 4 * one.quadratic, rtol=1e-12)
    np.testing.assert_allclose(two.V, two.quadratic, rtol=1e-12)


def test_lyapunov_flags_increase_outside_events(pair):
    p = ref_params(pair, c_hat=np.diag([0.3, 0.7]), d_hat=np.array([2.0, 2.0]))
    T = 4
    z = np.zeros((T, 2, 1))
    x = z.copy()
    x[2, 0, 0] = 1.0  # V jumps between steps 1 and 2
    rec = _record(x, z, z, np.tile([0.3, 0.7], (T, 1)), np.full((T, 2), -2.0))
    assert lyapunov_trace(rec, p, REF, pair, xi=[0.5, 0.2]).violations.tolist() == [1]
    rec.fired[1, 0] = True  # the same jump right after a broadcast is an event transient
    tr = lyapunov_trace(rec, p, REF, pair, xi=[0.5, 0.2])
    assert tr.monotone and tr.transient_increases.tolist() == [1]


def test_consensus_metrics_perfect_tracking():
    T = 50
    x0 = np.sin(np.linspace(0, 1, T))[:, None]
    x = np.repeat(x0[:, None, :], 3, axis=1)
    z = np.zeros_like(x)
    rec = _record(x, z, z, np.ones((T, 3)), np.ones((T, 3)), x0=x0)
    m = consensus_metrics(rec)
    np.testing.assert_array_equal(m["tail_position_error"], 0.0)
    np.testing.assert_array_equal(m["tail_velocity_error"], 0.0)
    np.testing.assert_array_equal(m["tail_gain_rate"], 0.0)
