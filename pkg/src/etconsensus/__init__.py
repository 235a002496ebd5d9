"""Event-triggered leader-following consensus for second-order agents with adaptive gains."""

__version__ = "0.1.0"

from .dynamics import DynamicsModel, double_integrator, make_model, pendulum  # noqa: E402
from .protocol import ProtocolParams  # noqa: E402
from .simulator import DivergenceError, InitialConditions, RunRecord, SimConfig, run  # noqa: E402
from .topology import Topology, build_topology, spectral_certificate, topology_from_laplacian  # noqa: E402

__all__ = [
    "DivergenceError",
    "DynamicsModel",
    "InitialConditions",
    "ProtocolParams",
    "RunRecord",
    "SimConfig",
    "Topology",
    "build_topology",
    "double_integrator",
    "make_model",
    "pendulum",
    "run",
    "spectral_certificate",
    "topology_from_laplacian",
]
