"""Fixed-step simulation of the leader, the followers and their event-triggered broadcasts.

Each step samples first and integrates second: triggers are evaluated on the grid point
using the held broadcasts, every firing agent latches its position (ascending id), and
then the augmented ODE in (x, v, w, c, d, x0, v0) is advanced by one RK4 or Euler step
with the broadcasts frozen.  Only the leader term of S_i varies inside the step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import DynamicsModel
from .protocol import ProtocolParams, c_rates, control_inputs, estimator_rates
from .topology import Topology, is_connected
from .trigger import EQUILIBRIUM_GUARD, combined_terms

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e9
INTEGRATORS = ("rk4", "euler")
TRIGGER_MODES = ("event", "every_step")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InitialConditions:
    """Explicit initial states, or uniform draws on [lo, hi] from a seeded PCG64 stream.

    Draw order for the random case: leader x0, leader v0, follower x, follower v.
    """

    x: np.ndarray | None = None
    v: np.ndarray | None = None
    x0: np.ndarray | None = None
    v0: np.ndarray | None = None
    lo: float = -1.0
    hi: float = 1.0
    seed: int | None = None

    @property
    def is_random(self) -> bool:
        return self.x is None

    def realize(self, n_agents: int, dim: int):
        if self.is_random:
            if self.seed is None:
                raise ConfigError("random initial conditions need a seed")
            rng = np.random.default_rng(self.seed)
            x0 = rng.uniform(self.lo, self.hi, size=dim)
            v0 = rng.uniform(self.lo, self.hi, size=dim)
            x = rng.uniform(self.lo, self.hi, size=(n_agents, dim))
            v = rng.uniform(self.lo, self.hi, size=(n_agents, dim))
            return x, v, x0, v0
        x = np.asarray(self.x, dtype=float).reshape(n_agents, dim)
        v = np.asarray(self.v, dtype=float).reshape(n_agents, dim)
        x0 = np.asarray(self.x0, dtype=float).reshape(dim)
        v0 = np.asarray(self.v0, dtype=float).reshape(dim)
        return x, v, x0, v0


@dataclass(frozen=True)
class SimConfig:
    topology: Topology
    dynamics: DynamicsModel
    protocol: ProtocolParams
    xi: np.ndarray
    t_end: float = 30.0
    h: float = 1e-3
    integrator: str = "rk4"
    init: InitialConditions = field(default_factory=lambda: InitialConditions(seed=0))
    d_initial: np.ndarray | None = None
    trigger_mode: str = "event"

    def __post_init__(self):
        N = self.topology.n_followers
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        if xi.shape != (N,):
            raise ConfigError(f"xi needs {N} entries, got {xi.shape[0]}")
        if np.any(xi <= 0):
            raise ConfigError("xi must be positive elementwise")
        object.__setattr__(self, "xi", xi)
        d0 = np.ones(N) if self.d_initial is None else np.asarray(self.d_initial, dtype=float).reshape(-1)
        if d0.shape != (N,):
            raise ConfigError(f"d_initial needs {N} entries, got {d0.shape[0]}")
        object.__setattr__(self, "d_initial", d0)
        if not self.h > 0:
            raise ConfigError(f"step size must be positive, got {self.h}")
        if self.t_end < self.h:
            raise ConfigError(f"t_end={self.t_end} is shorter than one step h={self.h}")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"integrator must be one of {INTEGRATORS}")
        if self.trigger_mode not in TRIGGER_MODES:
            raise ConfigError(f"trigger_mode must be one of {TRIGGER_MODES}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.h))

    @property
    def c_initial(self) -> np.ndarray:
        N = self.topology.n_followers
        if not self.protocol.c_initial:
            return np.zeros(N)
        c0 = np.asarray(self.protocol.c_initial, dtype=float)
        if c0.shape != (N,):
            raise ConfigError(f"c_initial needs {N} entries, got {c0.shape[0]}")
        return c0


@dataclass
class SystemState:
    t: float
    x: np.ndarray
    v: np.ndarray
    w: np.ndarray
    c: np.ndarray
    d: np.ndarray
    x0: np.ndarray
    v0: np.ndarray
    xb: np.ndarray  # last broadcast position of each agent (zero-order hold)
    tb: np.ndarray  # time of that broadcast

    def copy(self) -> "SystemState":
        return SystemState(
            self.t, *(np.array(a) for a in (self.x, self.v, self.w, self.c, self.d, self.x0, self.v0, self.xb, self.tb))
        )


@dataclass(frozen=True)
class Event:
    t: float
    agent_id: int
    x_broadcast: np.ndarray
    d_value: float
    step: int


class DivergenceError(RuntimeError):
    def __init__(self, message: str, record: "RunRecord | None" = None):
        super().__init__(message)
        self.record = record


@dataclass
class RunRecord:
    times: np.ndarray
    x: np.ndarray  # (T, N, n)
    v: np.ndarray
    w: np.ndarray
    u: np.ndarray
    c: np.ndarray  # (T, N)
    d: np.ndarray
    x0: np.ndarray  # (T, n)
    v0: np.ndarray
    x_broadcast: np.ndarray  # (T, N, n), held values after trigger processing at each grid point
    fired: np.ndarray  # (T, N) bool, broadcast at this grid point (row 0 is the initial broadcast)
    events: list[Event]
    h: float
    seed: int | None = None
    rng: str = "numpy.random.PCG64"
    completed: bool = True

    @property
    def n_agents(self) -> int:
        return self.c.shape[1]

    @property
    def n_steps(self) -> int:
        """Number of grid points at which triggers were evaluated."""
        return len(self.times) - 1

    def event_times(self, i: int) -> np.ndarray:
        return np.array([e.t for e in self.events if e.agent_id == i])

    def event_counts(self) -> np.ndarray:
        return self.fired.sum(axis=0)

    def triggered_fraction(self) -> np.ndarray:
        return self.event_counts() / max(self.n_steps, 1)

    def summary(self) -> list[dict]:
        gaps = min_inter_event_gap(self)
        frac = self.triggered_fraction()
        counts = self.event_counts()
        ex = np.abs(self.x[-1] - self.x0[-1]).max(axis=1)
        ev = np.abs(self.v[-1] - self.v0[-1]).max(axis=1)
        return [
            {
                "agent_id": i,
                "final_position_error": float(ex[i]),
                "final_velocity_error": float(ev[i]),
                "event_count": int(counts[i]),
                "triggered_fraction": float(frac[i]),
                "min_inter_event_gap": gaps[i],
                "final_gain": float(self.c[-1, i]),
                "final_threshold": float(self.d[-1, i]),
            }
            for i in range(self.n_agents)
        ]


def min_inter_event_gap(record: RunRecord) -> list[float | None]:
    """Smallest gap between consecutive broadcasts per agent; None with fewer than two events."""
    out: list[float | None] = []
    for i in range(record.n_agents):
        steps = np.flatnonzero(record.fired[:, i])
        if steps.size < 2:
            out.append(None)
        else:
            out.append(float(np.min(np.diff(record.times[steps]))))
    return out


def max_consecutive_fires(record: RunRecord) -> np.ndarray:
    """Longest run of consecutive grid points on which each agent fired."""
    best = np.zeros(record.n_agents, dtype=int)
    for i in range(record.n_agents):
        run = 0
        for f in record.fired[1:, i]:
            run = run + 1 if f else 0
            best[i] = max(best[i], run)
    return best


class _Layout:
    """Slices of the flat augmented state y = [x, v, w, c, d, x0, v0]."""

    def __init__(self, N: int, n: int):
        self.N, self.n = N, n
        Nn = N * n
        self.x = slice(0, Nn)
        self.v = slice(Nn, 2 * Nn)
        self.w = slice(2 * Nn, 3 * Nn)
        self.c = slice(3 * Nn, 3 * Nn + N)
        self.d = slice(3 * Nn + N, 3 * Nn + 2 * N)
        self.x0 = slice(3 * Nn + 2 * N, 3 * Nn + 2 * N + n)
        self.v0 = slice(3 * Nn + 2 * N + n, 3 * Nn + 2 * N + 2 * n)
        self.size = 3 * Nn + 2 * N + 2 * n

    def pack(self, s: SystemState) -> np.ndarray:
        return np.concatenate([s.x.ravel(), s.v.ravel(), s.w.ravel(), s.c, s.d, s.x0, s.v0])


def _make_rhs(cfg: SimConfig, lay: _Layout, xb: np.ndarray):
    L = cfg.topology.laplacian
    K = cfg.topology.leader_weights
    f = cfg.dynamics.eval
    p = cfg.protocol
    xi = cfg.xi
    relative = p.gain_mode == "relative"
    N, n = lay.N, lay.n
    d_frozen = ~np.isfinite(cfg.d_initial)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        x = y[lay.x].reshape(N, n)
        v = y[lay.v].reshape(N, n)
        w = y[lay.w].reshape(N, n)
        c = y[lay.c]
        x0 = y[lay.x0]
        v0 = y[lay.v0]
        S = combined_terms(L, K, xb, x0)
        u = control_inputs(c, w, S, p)
        x_tilde = (xb if relative else x) - x0
        dd = -xi * np.einsum("ij,ij->i", S, S)
        dd[d_frozen] = 0.0
        return np.concatenate(
            [
                v.ravel(),
                (f(t, x, v) + u).ravel(),
                estimator_rates(c, w, S, p).ravel(),
                c_rates(x_tilde, w, S, p),
                dd,
                v0,
                f(t, x0, v0),
            ]
        )

    return rhs


def rk4_step(rhs, t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def euler_step(rhs, t: float, y: np.ndarray, h: float) -> np.ndarray:
    return y + h * rhs(t, y)


_STEPPERS = {"rk4": rk4_step, "euler": euler_step}


def initial_state(cfg: SimConfig) -> SystemState:
    """State at t0 with the mandatory initial broadcast of every agent already applied."""
    N, n = cfg.topology.n_followers, cfg.dynamics.state_dim
    x, v, x0, v0 = cfg.init.realize(N, n)
    return SystemState(
        t=0.0,
        x=x,
        v=v,
        w=np.zeros((N, n)),
        c=cfg.c_initial.copy(),
        d=cfg.d_initial.copy(),
        x0=x0,
        v0=v0,
        xb=x.copy(),
        tb=np.zeros(N),
    )


def detect_events(state: SystemState, cfg: SimConfig) -> np.ndarray:
    """Boolean mask of agents whose trigger condition holds on the current snapshot."""
    if cfg.trigger_mode == "every_step":
        return np.ones(cfg.topology.n_followers, dtype=bool)
    S = combined_terms(cfg.topology.laplacian, cfg.topology.leader_weights, state.xb, state.x0)
    e = state.xb - state.x
    e2 = np.einsum("ij,ij->i", e, e)
    s2 = np.einsum("ij,ij->i", S, S)
    with np.errstate(invalid="ignore"):
        E = e2 - np.abs(state.d) * s2
    at_eq = (np.sqrt(e2) < EQUILIBRIUM_GUARD) & (np.sqrt(s2) < EQUILIBRIUM_GUARD)
    # an infinite threshold disables triggering (nan from inf * 0 also compares False)
    return (E >= 0) & ~at_eq


def apply_broadcasts(state: SystemState, fire: np.ndarray, step_index: int) -> list[Event]:
    events = []
    for i in np.flatnonzero(fire):
        state.xb[i] = state.x[i]
        state.tb[i] = state.t
        events.append(Event(state.t, int(i), state.x[i].copy(), float(state.d[i]), step_index))
    return events


def step(state: SystemState, h: float, cfg: SimConfig, step_index: int = 0) -> tuple[SystemState, list[Event]]:
    """Sample-then-integrate: fire triggers at ``state.t``, then advance to ``state.t + h``.

    The input state is not modified.
    """
    s = state.copy()
    fired = detect_events(s, cfg)
    events = apply_broadcasts(s, fired, step_index)
    lay = _Layout(cfg.topology.n_followers, cfg.dynamics.state_dim)
    rhs = _make_rhs(cfg, lay, s.xb)
    y = _STEPPERS[cfg.integrator](rhs, s.t, lay.pack(s), h)
    _check_finite(y, lay, cfg, s.t + h)
    N, n = lay.N, lay.n
    nxt = SystemState(
        t=s.t + h,
        x=y[lay.x].reshape(N, n),
        v=y[lay.v].reshape(N, n),
        w=y[lay.w].reshape(N, n),
        c=y[lay.c],
        d=y[lay.d],
        x0=y[lay.x0],
        v0=y[lay.v0],
        xb=s.xb,
        tb=s.tb,
    )
    return nxt, events


def _check_finite(y: np.ndarray, lay: _Layout, cfg: SimConfig, t: float) -> None:
    d_ok = np.isfinite(cfg.d_initial)
    for name in ("x", "v", "w", "c", "d", "x0", "v0"):
        part = y[getattr(lay, name)]
        if name == "d":
            part = part[d_ok]
        bad = ~np.isfinite(part) | (np.abs(part) > DIVERGENCE_LIMIT)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            if name in ("x", "v", "w"):
                agent = k // lay.n
            elif name == "d":
                agent = int(np.flatnonzero(d_ok)[k])
            elif name == "c":
                agent = k
            else:
                agent = "leader"
            raise DivergenceError(f"component {name} of agent {agent} diverged at t={t:.6g}")


def run(cfg: SimConfig) -> RunRecord:
    """Integrate from t0 = 0 to t_end on the fixed grid; raises DivergenceError with the partial record."""
    if not is_connected(cfg.topology):
        log.warning("communication graph is disconnected; consensus is not expected")
    N, n = cfg.topology.n_followers, cfg.dynamics.state_dim
    T = cfg.n_steps + 1
    h = cfg.h
    times = np.arange(T) * h
    rec = {k: np.full((T, N, n), np.nan) for k in ("x", "v", "w", "u", "xb")}
    rec.update({k: np.full((T, N), np.nan) for k in ("c", "d")})
    rec.update({k: np.full((T, n), np.nan) for k in ("x0", "v0")})
    fired = np.zeros((T, N), dtype=bool)

    state = initial_state(cfg)
    events = [Event(0.0, i, state.x[i].copy(), float(state.d[i]), 0) for i in range(N)]
    fired[0] = True

    lay = _Layout(N, n)
    stepper = _STEPPERS[cfg.integrator]
    L, K, p = cfg.topology.laplacian, cfg.topology.leader_weights, cfg.protocol

    def store(k: int, s: SystemState):
        rec["x"][k], rec["v"][k], rec["w"][k] = s.x, s.v, s.w
        rec["c"][k], rec["d"][k], rec["x0"][k], rec["v0"][k] = s.c, s.d, s.x0, s.v0
        rec["xb"][k] = s.xb
        rec["u"][k] = control_inputs(s.c, s.w, combined_terms(L, K, s.xb, s.x0), p)

    def record(upto: int) -> RunRecord:
        cut = slice(0, upto)
        return RunRecord(
            times=times[cut],
            x=rec["x"][cut],
            v=rec["v"][cut],
            w=rec["w"][cut],
            u=rec["u"][cut],
            c=rec["c"][cut],
            d=rec["d"][cut],
            x0=rec["x0"][cut],
            v0=rec["v0"][cut],
            x_broadcast=rec["xb"][cut],
            fired=fired[cut],
            events=events,
            h=h,
            seed=cfg.init.seed if cfg.init.is_random else None,
            completed=upto == T,
        )

    for k in range(cfg.n_steps):
        state.t = times[k]
        fire = detect_events(state, cfg)
        events.extend(apply_broadcasts(state, fire, k))
        fired[k] |= fire
        store(k, state)
        rhs = _make_rhs(cfg, lay, state.xb)
        y = stepper(rhs, state.t, lay.pack(state), h)
        try:
            _check_finite(y, lay, cfg, times[k + 1])
        except DivergenceError as exc:
            raise DivergenceError(str(exc), record(k + 1)) from None
        state.x = y[lay.x].reshape(N, n)
        state.v = y[lay.v].reshape(N, n)
        state.w = y[lay.w].reshape(N, n)
        state.c = y[lay.c]
        state.d = y[lay.d]
        state.x0 = y[lay.x0]
        state.v0 = y[lay.v0]
    state.t = times[-1]
    store(T - 1, state)
    return record(T)


__all__ = [
    "ConfigError",
    "DivergenceError",
    "Event",
    "InitialConditions",
    "RunRecord",
    "SimConfig",
    "SystemState",
    "detect_events",
    "initial_state",
    "max_consecutive_fires",
    "min_inter_event_gap",
    "run",
    "step",
]
