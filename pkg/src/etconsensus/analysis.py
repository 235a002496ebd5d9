"""Lyapunov certificate matrices, the numeric Pi < 0 check, V(t) traces and consensus metrics."""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .protocol import ProtocolParams
from .simulator import RunRecord
from .topology import SpectralError, Topology, spectral_certificate


@dataclass(frozen=True)
class LyapunovParams:
    """Analysis-side constants of the Lyapunov candidate.

    ``varsigma`` and ``rho`` are kept separate from the physical model so that a
    given parameter set can be checked verbatim.  ``kappa`` is derived when None.
    ``d_hat`` defaults to 2|d_i(t0)| when None (see :func:`derive_d_hat`).
    """

    mu: float
    varpi: float
    eta: float
    omega: float
    c_hat: np.ndarray
    delta_d: np.ndarray
    varsigma: float
    rho: float
    d_hat: np.ndarray | None = None
    kappa: float | None = None
    dominance_ratio: float = 10.0

    def kappa_for(self, params: ProtocolParams) -> float:
        if self.kappa is not None:
            return float(self.kappa)
        return kappa(self.rho, self.varpi, self.eta, params.alpha, params.beta)


def kappa(rho: float, varpi: float, eta: float, alpha: float, beta: float) -> float:
    return max(rho * (varpi + eta / 2 + alpha / (2 * beta)), eta / 2, alpha / (2 * beta))


def derive_d_hat(d_initial) -> np.ndarray:
    """Smallest admissible d_hat_i = 2 d_i(t0) sgn(d_i(t0))."""
    return 2.0 * np.abs(np.asarray(d_initial, dtype=float))


def parameter_violations(p: LyapunovParams, params: ProtocolParams, d_initial=None, rel_tol: float = 1e-3) -> list[str]:
    """Side conditions of the certificate that do not enter the eigenvalue test."""
    out = []
    if not (p.varpi > 0 and p.mu >= p.dominance_ratio * p.varpi):
        out.append(f"mu >> varpi > 0 not met (mu={p.mu}, varpi={p.varpi}, ratio {p.dominance_ratio})")
    if not p.eta > 0:
        out.append(f"eta must be positive (eta={p.eta})")
    if p.varpi > 0 and abs(p.eta / p.varpi - params.delta) > rel_tol * params.delta:
        out.append(f"eta/varpi = {p.eta / p.varpi:.6g} differs from delta = {params.delta}")
    if p.rho < 0:
        out.append(f"rho = {p.rho} is negative")
    if d_initial is not None and p.d_hat is not None:
        need = derive_d_hat(d_initial)
        if np.any(np.asarray(p.d_hat) < need):
            out.append("d_hat below 2|d(t0)| for some agent")
    return out


def omega_core(p: LyapunovParams, params: ProtocolParams) -> np.ndarray:
    a = params.alpha / params.beta * p.eta
    return np.array(
        [
            [p.mu, -p.varpi, p.varpi],
            [-p.varpi, p.eta, -a],
            [p.varpi, -a, p.eta],
        ]
    )


def assemble_omega(p: LyapunovParams, params: ProtocolParams, N: int) -> np.ndarray:
    """3N x 3N weight of the quadratic part of V, ordered as [x~, v~, w] blocks."""
    return np.kron(omega_core(p, params), np.eye(N))


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def pi_blocks(p: LyapunovParams, params: ProtocolParams, topo: Topology) -> dict[str, np.ndarray]:
    """Upper blocks of Pi over the variables [x~, v~, w, eps].

    Scalar summands act as multiples of I_N.  Diagonal blocks are replaced by their
    symmetric parts, which leaves the quadratic form unchanged.
    """
    N = topo.n_followers
    a, b, g = params.alpha, params.beta, params.gamma
    mu, vp, eta, om, vs = p.mu, p.varpi, p.eta, p.omega, p.varsigma
    k = p.kappa_for(params)
    I = np.eye(N)
    H = topo.h_matrix
    CH = np.asarray(p.c_hat, dtype=float) @ H
    DH2 = np.asarray(p.delta_d, dtype=float) @ H @ H
    return {
        "11": _sym(vp * (a - b) * CH + k * I - om * DH2),
        "12": (0.5 * mu - 0.5 * vp * vs) * I,
        "13": 0.5 * vp * (a - g) * I + (a**2 - b**2) / (2 * b) * eta * CH,
        "22": (-vp + vs * eta + k) * I,
        "23": (-a * eta + 0.5 * vp + a * g / (2 * b) * eta - vs * a / (2 * b)) * I,
        "33": (a**2 / b * eta - g * eta + k) * I,
        "14": vp * (a - b) * CH - om * DH2,
        "24": np.zeros((N, N)),
        "34": (a**2 - b**2) / b * eta * CH,
        "44": _sym(-om * (I + DH2)),
    }


def assemble_pi(p: LyapunovParams, params: ProtocolParams, topo: Topology) -> tuple[np.ndarray, float]:
    """Symmetric 4N x 4N matrix Pi and its largest eigenvalue."""
    B = pi_blocks(p, params, topo)
    rows = []
    for r in range(1, 5):
        row = []
        for c in range(1, 5):
            row.append(B[f"{r}{c}"] if r <= c else B[f"{c}{r}"].T)
        rows.append(row)
    Pi = np.block(rows)
    return Pi, float(_eigvalsh(Pi)[-1])


def _eigvalsh(M: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.eigvalsh(M)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigensolver did not converge: {exc}") from exc


@dataclass
class FeasibilityReport:
    lambda_min_omega: float
    lambda_max_pi: float
    lambda_max_pi11: float
    lambda_max_pi22: float
    h_min_eigenvalue: float
    kappa: float
    passed: bool
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    parameters: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            **self.parameters,
            "kappa": self.kappa,
            "lambda_min_H": self.h_min_eigenvalue,
            "lambda_min_Omega": self.lambda_min_omega,
            "lambda_max_Pi": self.lambda_max_pi,
            "lambda_max_Pi11": self.lambda_max_pi11,
            "lambda_max_Pi22": self.lambda_max_pi22,
            "verdict": "pass" if self.passed else "fail",
            "violations": "; ".join(self.violations),
            "warnings": "; ".join(self.warnings),
        }


def check_feasibility(p: LyapunovParams, params: ProtocolParams, topo: Topology, d_initial=None) -> FeasibilityReport:
    """Pass iff H > 0, Omega > 0 and Pi < 0 (all strict, by eigenvalues)."""
    facts = spectral_certificate(topo)
    k = p.kappa_for(params)
    summary = {"mu": p.mu, "varpi": p.varpi, "eta": p.eta, "omega": p.omega, "varsigma": p.varsigma, "rho": p.rho}
    warnings = parameter_violations(p, params, d_initial)
    nan = float("nan")
    if not facts.h_positive_definite:
        return FeasibilityReport(
            nan, nan, nan, nan, facts.h_min_eigenvalue, k, False,
            [f"H is not positive definite (lambda_min = {facts.h_min_eigenvalue:.3g})"], warnings, summary,
        )
    N = topo.n_followers
    lam_omega = float(_eigvalsh(assemble_omega(p, params, N))[0])
    Pi, lam_pi = assemble_pi(p, params, topo)
    lam11 = float(_eigvalsh(Pi[: 3 * N, : 3 * N])[-1])
    lam22 = float(_eigvalsh(Pi[3 * N :, 3 * N :])[-1])
    domain = (("varpi", p.varpi), ("eta", p.eta), ("omega", p.omega))
    violations = [f"{name} must be positive (got {v})" for name, v in domain if not v > 0]
    if not lam_omega > 0:
        violations.append(f"Omega not positive definite (lambda_min = {lam_omega:.6g})")
    if not lam_pi < 0:
        if lam11 >= 0:
            violations.append(f"Pi11 not negative definite (lambda_max = {lam11:.6g})")
        if lam22 >= 0:
            violations.append(f"Pi22 not negative definite (lambda_max = {lam22:.6g})")
        if lam11 < 0 and lam22 < 0:
            violations.append("Schur complement of Pi22 not negative definite (coupling block Pi12)")
    return FeasibilityReport(
        lam_omega, lam_pi, lam11, lam22, facts.h_min_eigenvalue, k, not violations, violations, warnings, summary
    )


def _check_point(args):
    p, params, topo, d_initial = args
    return check_feasibility(p, params, topo, d_initial)


def grid_search(
    p: LyapunovParams,
    params: ProtocolParams,
    topo: Topology,
    grid: dict[str, list[float]],
    d_initial=None,
    jobs: int = 1,
) -> list[FeasibilityReport]:
    """Check every combination of the listed fields of ``p``.

    Exhaustive and unoptimised: it only evaluates the points it is given and says
    nothing about feasibility between them.
    """
    names = list(grid)
    points = [replace(p, **dict(zip(names, combo))) for combo in itertools.product(*(grid[n] for n in names))]
    work = [(q, params, topo, d_initial) for q in points]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_check_point, work))
    return [_check_point(w) for w in work]


@dataclass
class LyapunovTrace:
    times: np.ndarray
    V: np.ndarray
    quadratic: np.ndarray
    gain_term: np.ndarray
    threshold_term: np.ndarray
    tol: float
    violations: np.ndarray  # step indices k where V[k+1] - V[k] > tol outside event transients
    transient_increases: np.ndarray

    @property
    def monotone(self) -> bool:
        return self.violations.size == 0


def lyapunov_trace(
    record: RunRecord,
    p: LyapunovParams,
    params: ProtocolParams,
    topo: Topology,
    xi,
    d_initial=None,
    zeta=None,
    rel_tol: float = 1e-6,
) -> LyapunovTrace:
    """V(t) on the record's grid.

    The gain term uses the diagonal of ``p.c_hat``; zeta_i defaults to 1.  An increase
    over [t_k, t_k+1] counts as an event transient when any agent broadcast at t_k.
    """
    N = topo.n_followers
    core = omega_core(p, params)
    xt = record.x - record.x0[:, None, :]
    vt = record.v - record.v0[:, None, :]
    z = np.stack([xt, vt, record.w], axis=1)  # (T, 3, N, n)
    quad = 0.5 * np.einsum("tain,ab,tbin->t", z, core, z)
    zeta = np.ones(N) if zeta is None else np.asarray(zeta, dtype=float)
    c_hat = np.diag(np.asarray(p.c_hat, dtype=float))
    gain = np.sum(p.varpi / (2 * zeta) * (record.c - c_hat) ** 2, axis=1)
    if p.d_hat is not None:
        d_hat = np.asarray(p.d_hat, dtype=float)
    elif d_initial is not None:
        d_hat = derive_d_hat(d_initial)
    else:
        d_hat = derive_d_hat(record.d[0])
    thr = np.sum(p.omega / (2 * np.asarray(xi, dtype=float)) * (record.d + d_hat) ** 2, axis=1)
    V = quad + gain + thr
    tol = rel_tol * float(np.max(np.abs(V))) if V.size else 0.0
    inc = np.flatnonzero(np.diff(V) > tol)
    transient = record.fired[:-1].any(axis=1)
    return LyapunovTrace(
        times=record.times,
        V=V,
        quadratic=quad,
        gain_term=gain,
        threshold_term=thr,
        tol=tol,
        violations=inc[~transient[inc]],
        transient_increases=inc[transient[inc]],
    )


def threshold_margin(d_series: np.ndarray, d_hat) -> np.ndarray:
    """Diagonal of D - |D| + D_hat along a run; the certificate needs it nonnegative."""
    d = np.asarray(d_series, dtype=float)
    return d - np.abs(d) + np.asarray(d_hat, dtype=float)


def consensus_metrics(record: RunRecord, tail_fraction: float = 0.1) -> dict:
    """Tail tracking errors, event statistics and gain/threshold behaviour."""
    T = len(record.times)
    start = min(int(np.floor((1 - tail_fraction) * (T - 1))), T - 1)
    tail = slice(start, T)
    ex = np.abs(record.x[tail] - record.x0[tail][:, None, :]).max(axis=(0, 2))
    ev = np.abs(record.v[tail] - record.v0[tail][:, None, :]).max(axis=(0, 2))
    cdot = np.diff(record.c[tail], axis=0) / record.h
    return {
        "tail_start": float(record.times[start]),
        "tail_position_error": ex,
        "tail_velocity_error": ev,
        "event_counts": record.event_counts(),
        "triggered_fraction": record.triggered_fraction(),
        "final_gain": record.c[-1].copy(),
        "gain_bound": np.abs(record.c).max(axis=0),
        "tail_gain_rate": np.abs(cdot).max(axis=0) if cdot.size else np.zeros(record.n_agents),
        "thresholds": record.d,
    }


def tail_errors(record: RunRecord, window: float) -> tuple[float, float]:
    """max_i |x_i - x_0| and max_i |v_i - v_0| over the last ``window`` seconds."""
    mask = record.times >= record.times[-1] - window - 1e-12
    ex = float(np.abs(record.x[mask] - record.x0[mask][:, None, :]).max())
    ev = float(np.abs(record.v[mask] - record.v0[mask][:, None, :]).max())
    return ex, ev
