"""Consensus protocol with estimator w_i and adaptive coupling gain c_i."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAIN_MODES = ("as_printed", "relative")


@dataclass(frozen=True)
class ProtocolParams:
    alpha: float
    beta: float
    gamma: float
    delta: float
    c_initial: tuple[float, ...] = ()
    gain_mode: str = "as_printed"

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.gain_mode not in GAIN_MODES:
            raise ValueError(f"gain_mode must be one of {GAIN_MODES}, got {self.gain_mode!r}")

    @property
    def c_coupling(self) -> float:
        """Coefficient of <x~_i, S_i> in the gain law."""
        return self.beta - self.alpha

    @property
    def c_estimator(self) -> float:
        """Coefficient of <w_i, S_i> in the gain law."""
        return self.delta * (self.beta**2 - self.alpha**2) / self.beta


@dataclass
class AgentState:
    x: np.ndarray
    v: np.ndarray
    w: np.ndarray
    c: float


def control_input(state: AgentState, S, params: ProtocolParams) -> np.ndarray:
    """u_i = -alpha c_i S_i - alpha w_i."""
    return -params.alpha * state.c * np.asarray(S) - params.alpha * np.asarray(state.w)


def estimator_rate(state: AgentState, S, params: ProtocolParams) -> np.ndarray:
    """dw_i/dt = -gamma w_i - beta c_i S_i."""
    return -params.gamma * np.asarray(state.w) - params.beta * state.c * np.asarray(S)


def c_rate(state: AgentState, x_tilde, S, params: ProtocolParams) -> float:
    """dc_i/dt = (beta - alpha) <x~_i, S_i> + delta (beta^2 - alpha^2)/beta <w_i, S_i>."""
    S = np.atleast_1d(np.asarray(S, dtype=float))
    return params.c_coupling * float(np.atleast_1d(x_tilde) @ S) + params.c_estimator * float(
        np.atleast_1d(state.w) @ S
    )


# Vectorised forms used by the simulator; arrays have shape (N, n), gains shape (N,).


def control_inputs(c: np.ndarray, w: np.ndarray, S: np.ndarray, params: ProtocolParams) -> np.ndarray:
    return -params.alpha * (c[:, None] * S + w)


def estimator_rates(c: np.ndarray, w: np.ndarray, S: np.ndarray, params: ProtocolParams) -> np.ndarray:
    return -params.gamma * w - params.beta * c[:, None] * S


def c_rates(x_tilde: np.ndarray, w: np.ndarray, S: np.ndarray, params: ProtocolParams) -> np.ndarray:
    return params.c_coupling * np.einsum("ij,ij->i", x_tilde, S) + params.c_estimator * np.einsum("ij,ij->i", w, S)


def compact_matrices(c: np.ndarray, H: np.ndarray, params: ProtocolParams) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop error matrices (H~, G~) of dz/dt = F + H~ z + G~ eps for scalar agents.

    z = [x~, v~, w] stacked over agents and eps = [e_x1 - e_x0, ...] with e_x0 = 0.
    """
    N = H.shape[0]
    CH = np.diag(c) @ H
    I, Z = np.eye(N), np.zeros((N, N))
    a, b, g = params.alpha, params.beta, params.gamma
    Ht = np.block([[Z, I, Z], [-a * CH, Z, -a * I], [-b * CH, Z, -g * I]])
    Gt = np.vstack([Z, -a * CH, -b * CH])
    return Ht, Gt
