"""Experiment configuration files (TOML) and their conversion into simulation objects."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .analysis import LyapunovParams
from .dynamics import make_model
from .protocol import ProtocolParams
from .simulator import ConfigError, InitialConditions, SimConfig
from .topology import Topology, TopologyError, build_topology, topology_from_laplacian

BUNDLED = ("g1", "g2")
_ALIASES = {"seed": "init.seed", "t_end": "simulation.t_end", "h": "simulation.h"}


def schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config_schema.json").read_text())


def bundled_config_path(name: str) -> Path:
    path = resources.files(__package__).joinpath("configs", f"{name}.toml")
    return Path(str(path))


def load_raw(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def validate(raw: dict, source: str = "<config>") -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        if err.validator == "required":
            missing = err.message.split("'")[1]
            where = f"{where}.{missing}" if where != "<root>" else missing
        raise ConfigError(f"{source}: schema violation at {where}: {err.message}")


def parse_value(text: str) -> Any:
    """Parse an override value with TOML literal rules; bare words fall back to strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        key = _ALIASES.get(key.strip(), key.strip())
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {part!r} is not a section")
        node[parts[-1]] = parse_value(value.strip())
    return out


@dataclass
class Experiment:
    name: str
    raw: dict
    sim: SimConfig
    lyapunov: LyapunovParams | None
    grid: dict[str, list[float]]


def _topology(sec: dict) -> Topology:
    matrix = np.asarray(sec["matrix"], dtype=float)
    try:
        if sec["format"] == "laplacian":
            return topology_from_laplacian(matrix, sec["leader_weights"])
        return build_topology(matrix, sec["leader_weights"])
    except (TopologyError, ValueError) as exc:
        raise ConfigError(f"topology: {exc}") from exc


def _lyapunov(sec: dict, topo: Topology) -> tuple[LyapunovParams, dict]:
    N = topo.n_followers
    if sec["c_hat"] == "h_inverse":
        try:
            c_hat = sec.get("c_hat_scale", 1.0) * np.linalg.inv(topo.h_matrix)
        except np.linalg.LinAlgError:
            raise ConfigError("lyapunov.c_hat: H is singular, h_inverse is undefined") from None
    else:
        c_hat = np.diag(np.asarray(sec["c_hat"], dtype=float)) * sec.get("c_hat_scale", 1.0)
    dd = sec["delta_d"]
    delta_d = dd * np.eye(N) if np.isscalar(dd) else np.diag(np.asarray(dd, dtype=float))
    if c_hat.shape != (N, N) or delta_d.shape != (N, N):
        raise ConfigError(f"lyapunov: c_hat and delta_d must describe {N} agents")
    p = LyapunovParams(
        mu=sec["mu"],
        varpi=sec["varpi"],
        eta=sec["eta"],
        omega=sec["omega"],
        c_hat=c_hat,
        delta_d=delta_d,
        varsigma=sec["varsigma"],
        rho=sec["rho"],
        d_hat=None if "d_hat" not in sec else np.asarray(sec["d_hat"], dtype=float),
        kappa=sec.get("kappa"),
        dominance_ratio=sec.get("dominance_ratio", 10.0),
    )
    return p, dict(sec.get("grid", {}))


def build(raw: dict, source: str = "<config>") -> Experiment:
    validate(raw, source)
    topo = _topology(raw["topology"])
    N = topo.n_followers
    dyn = raw["dynamics"]
    try:
        model = make_model(dyn["model"], state_dim=dyn.get("state_dim", 1), **dyn.get("params", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"dynamics: {exc}") from exc
    pr = raw["protocol"]
    try:
        protocol = ProtocolParams(
            alpha=pr["alpha"],
            beta=pr["beta"],
            gamma=pr["gamma"],
            delta=pr["delta"],
            c_initial=tuple(pr.get("c_initial", ())),
            gain_mode=pr.get("gain_mode", "as_printed"),
        )
    except ValueError as exc:
        raise ConfigError(f"protocol: {exc}") from exc
    ini = raw["init"]
    if ini["mode"] == "random":
        if "seed" not in ini:
            raise ConfigError(f"{source}: schema violation at init.seed: random initial conditions need a seed")
        init = InitialConditions(lo=ini.get("lo", -1.0), hi=ini.get("hi", 1.0), seed=ini["seed"])
    else:
        missing = [k for k in ("x", "v", "x0", "v0") if k not in ini]
        if missing:
            raise ConfigError(f"{source}: schema violation at init.{missing[0]}: explicit mode needs x, v, x0, v0")
        init = InitialConditions(x=ini["x"], v=ini["v"], x0=ini["x0"], v0=ini["v0"], seed=ini.get("seed"))
    trig = raw["trigger"]
    simsec = raw["simulation"]
    try:
        sim = SimConfig(
            topology=topo,
            dynamics=model,
            protocol=protocol,
            xi=trig["xi"],
            t_end=simsec["t_end"],
            h=simsec["h"],
            integrator=simsec.get("integrator", "rk4"),
            init=init,
            d_initial=trig.get("d_initial"),
            trigger_mode=trig.get("mode", "event"),
        )
        sim.c_initial  # surface c_initial and init shape errors before the run starts
        init.realize(N, model.state_dim)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    lyap, grid = (None, {})
    if "lyapunov" in raw:
        lyap, grid = _lyapunov(raw["lyapunov"], topo)
    return Experiment(raw.get("name", Path(source).stem), raw, sim, lyap, grid)


def load(path: str | Path, overrides: list[str] | None = None) -> Experiment:
    raw = apply_overrides(load_raw(path), overrides or [])
    return build(raw, str(path))
