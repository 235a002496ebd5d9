"""Event detection, zero-order-hold broadcast stores and the adaptive threshold law."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .topology import Topology

EQUILIBRIUM_GUARD = 1e-12


class ProtocolViolation(RuntimeError):
    """A store is missing a broadcast it must have received."""


@dataclass(frozen=True)
class BroadcastMsg:
    sender: int
    position: np.ndarray
    time: float


@dataclass
class SampledStore:
    """What agent ``agent_id`` knows: its own last broadcast and its neighbours' latest ones."""

    agent_id: int
    own_broadcast: np.ndarray | None = None
    own_broadcast_time: float | None = None
    neighbor_broadcast: dict[int, tuple[np.ndarray, float]] = field(default_factory=dict)
    leader_access: bool = False

    @classmethod
    def for_agent(cls, topo: Topology, i: int) -> "SampledStore":
        return cls(agent_id=i, leader_access=bool(topo.leader_weights[i] > 0))

    def receive(self, msg: BroadcastMsg) -> None:
        self.neighbor_broadcast[msg.sender] = (np.array(msg.position, dtype=float), float(msg.time))

    def measurement_error(self, x_now) -> np.ndarray:
        """e_x = x_i(t_k^i) - x_i(t)."""
        return np.asarray(self.own_broadcast) - np.asarray(x_now, dtype=float)


@dataclass
class TriggerState:
    d: float
    xi: float
    d_initial: float

    @classmethod
    def initial(cls, d0: float, xi: float) -> "TriggerState":
        if xi <= 0:
            raise ValueError(f"threshold adaptation rate must be positive, got {xi}")
        return cls(d=float(d0), xi=float(xi), d_initial=float(d0))


def combined_term(store: SampledStore, topo: Topology, i: int, x0=None) -> np.ndarray:
    """Sum_j h_ij x~_j(t_k^j, t), evaluated from relative positions only.

    -sum_j w_ij [x_j(t_k^j) - x_i(t_k^i)] - k_i [x_0(t) - x_i(t_k^i)]; ``x0`` is read only
    when agent i hears the leader.
    """
    if store.own_broadcast is None:
        raise ProtocolViolation(f"agent {i} has not broadcast yet")
    xi_b = np.asarray(store.own_broadcast, dtype=float)
    s = np.zeros_like(xi_b)
    for j in topo.neighbors(i):
        try:
            xj_b, _ = store.neighbor_broadcast[j]
        except KeyError:
            raise ProtocolViolation(f"agent {i} holds no broadcast from neighbour {j}") from None
        s -= topo.adjacency[i, j] * (xj_b - xi_b)
    k = topo.leader_weights[i]
    if k > 0:
        if x0 is None:
            raise ProtocolViolation(f"agent {i} is a leader neighbour but no leader position given")
        s -= k * (np.asarray(x0, dtype=float) - xi_b)
    return s


def combined_terms(laplacian: np.ndarray, leader_weights: np.ndarray, broadcasts: np.ndarray, x0) -> np.ndarray:
    """Stacked S for all agents: L @ xb + K * (xb - x0); ``broadcasts`` has shape (N, n)."""
    return laplacian @ broadcasts + leader_weights[:, None] * (broadcasts - x0)


def threshold(d: float, S) -> float:
    """Upsilon = |d| * ||S||^2 (d sign(d) = |d|)."""
    S = np.atleast_1d(np.asarray(S, dtype=float))
    return abs(d) * float(S @ S)


def trigger_value(e_x, d: float, S) -> float:
    e_x = np.atleast_1d(np.asarray(e_x, dtype=float))
    return float(e_x @ e_x) - threshold(d, np.atleast_1d(S))


def should_fire(E: float, e_x, S, guard: float = EQUILIBRIUM_GUARD) -> bool:
    at_equilibrium = np.linalg.norm(np.atleast_1d(e_x)) < guard and np.linalg.norm(np.atleast_1d(S)) < guard
    return bool(E >= 0 and not at_equilibrium)


def d_rate(S, xi: float) -> float:
    S = np.atleast_1d(np.asarray(S, dtype=float))
    return -xi * float(S @ S)


def on_fire(store: SampledStore, i: int, x_now, t: float) -> BroadcastMsg:
    """Latch the current position as agent i's broadcast and build the message for its neighbours."""
    pos = np.array(x_now, dtype=float)
    store.own_broadcast = pos
    store.own_broadcast_time = float(t)
    return BroadcastMsg(sender=i, position=pos.copy(), time=float(t))


def deliver(msg: BroadcastMsg, stores: list[SampledStore], topo: Topology) -> None:
    """Ideal channel: every neighbour of the sender updates its entry immediately."""
    for j in topo.neighbors(msg.sender):
        stores[j].receive(msg)
