"""Agent self-dynamics f(t, x, v) and a grid check of the Lipschitz/linear-coupling assumption."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PositionPart = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DynamicsModel:
    """Self-dynamics split as f(t, x, v) = position_part(t, x) + varsigma * v.

    ``rho`` is the claimed Lipschitz constant of ``position_part`` in x.
    """

    name: str
    position_part: PositionPart
    varsigma: float
    rho: float
    state_dim: int = 1
    params: dict = field(default_factory=dict)

    def eval(self, t: float, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.position_part(t, x) + self.varsigma * np.asarray(v)


def pendulum(g: float = 9.8, k: float = 0.1, l: float = 4.0, m: float = 1.0, state_dim: int = 1) -> DynamicsModel:
    """Damped pendulum, f = -(g/l) sin(x) - (k/m) v."""
    if l <= 0:
        raise ValueError(f"pendulum length must be positive, got {l}")
    if m <= 0:
        raise ValueError(f"pendulum mass must be positive, got {m}")
    gain = g / l

    def position_part(t, x):
        return -gain * np.sin(x)

    return DynamicsModel(
        name="pendulum",
        position_part=position_part,
        varsigma=-k / m,
        rho=abs(gain),
        state_dim=state_dim,
        params={"g": g, "k": k, "l": l, "m": m},
    )


def double_integrator(state_dim: int = 1) -> DynamicsModel:
    """f = 0; useful for closed-form checks of the closed loop."""
    return DynamicsModel(
        name="double_integrator",
        position_part=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        varsigma=0.0,
        rho=0.0,
        state_dim=state_dim,
    )


_REGISTRY: dict[str, Callable[..., DynamicsModel]] = {
    "pendulum": pendulum,
    "double_integrator": double_integrator,
}


def register_model(name: str, factory: Callable[..., DynamicsModel]) -> None:
    _REGISTRY[name] = factory


def make_model(name: str, **params) -> DynamicsModel:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown dynamics model {name!r}; known: {sorted(_REGISTRY)}") from None
    return factory(**params)


@dataclass
class ValidationReport:
    max_ratio: float
    rho: float
    lipschitz_ok: bool
    coupling_residual: float
    coupling_ok: bool
    pairs_checked: int

    @property
    def passed(self) -> bool:
        return self.lipschitz_ok and self.coupling_ok


def validate_assumption1(
    model: DynamicsModel,
    domain: tuple[float, float] | list[tuple[float, float]],
    grid_points: int = 201,
    t: float = 0.0,
    v_samples: int = 5,
    v_range: float = 10.0,
) -> ValidationReport:
    """Grid check of ||f(t,x) - f(t,y)|| <= rho ||x - y|| and of exact linear velocity coupling.

    ``domain`` is one (lo, hi) interval applied to every axis, or one interval per axis.
    """
    if grid_points < 2:
        raise ValueError("grid_points must be at least 2 per axis")
    n = model.state_dim
    if isinstance(domain[0], (int, float)):
        bounds = [tuple(domain)] * n
    else:
        bounds = [tuple(b) for b in domain]
    axes = [np.linspace(lo, hi, grid_points) for lo, hi in bounds]
    pts = np.array(list(itertools.product(*axes)), dtype=float)
    fx = np.array([np.atleast_1d(model.position_part(t, p)) for p in pts])

    max_ratio = 0.0
    pairs = 0
    for a in range(len(pts)):
        dx = np.linalg.norm(pts[a + 1 :] - pts[a], axis=1)
        df = np.linalg.norm(fx[a + 1 :] - fx[a], axis=1)
        mask = dx > 0
        if np.any(mask):
            max_ratio = max(max_ratio, float(np.max(df[mask] / dx[mask])))
        pairs += int(mask.sum())

    rng = np.random.default_rng(0)
    residual = 0.0
    for p in pts[:: max(1, len(pts) // 25)]:
        for v1, v2 in rng.uniform(-v_range, v_range, size=(v_samples, 2, n)):
            lhs = np.atleast_1d(model.eval(t, p, v1)) - np.atleast_1d(model.eval(t, p, v2))
            residual = max(residual, float(np.linalg.norm(lhs - model.varsigma * (v1 - v2))))
    lipschitz_ok = max_ratio <= model.rho + 1e-9
    coupling_ok = residual <= 1e-9 * max(1.0, v_range)
    return ValidationReport(max_ratio, model.rho, lipschitz_ok, residual, coupling_ok, pairs)

