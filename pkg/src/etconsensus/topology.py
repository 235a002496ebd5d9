"""Communication graph, Laplacian and the leader-augmented matrix H = L + diag(K)."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-12
ZERO_EIG_RTOL = 1e-9


class TopologyError(ValueError):
    """Base class for rejected graph inputs."""


class DimensionError(TopologyError):
    pass


class AsymmetricAdjacencyError(TopologyError):
    pass


class NegativeWeightError(TopologyError):
    pass


class SelfLoopError(TopologyError):
    pass


class NoLeaderLinkError(TopologyError):
    """No follower receives the leader's state (every k_i is zero)."""


class InvalidLaplacianError(TopologyError):
    pass


class SpectralError(RuntimeError):
    """Eigensolver failed to converge."""


@dataclass(frozen=True)
class Topology:
    n_followers: int
    adjacency: np.ndarray
    laplacian: np.ndarray
    leader_weights: np.ndarray
    h_matrix: np.ndarray

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i] > 0)]

    @property
    def leader_neighbors(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.leader_weights > 0)]


@dataclass(frozen=True)
class SpectralFacts:
    laplacian_eigenvalues: np.ndarray
    h_eigenvalues: np.ndarray
    zero_eigenvalue_count: int
    connected: bool
    simple_zero_eigenvalue: bool
    h_positive_definite: bool

    @property
    def algebraic_connectivity(self) -> float:
        return float(self.laplacian_eigenvalues[1]) if self.laplacian_eigenvalues.size > 1 else 0.0

    @property
    def h_min_eigenvalue(self) -> float:
        return float(self.h_eigenvalues[0])


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def laplacian_from_adjacency(adjacency: np.ndarray) -> np.ndarray:
    W = np.asarray(adjacency, dtype=float)
    return np.diag(W.sum(axis=1)) - W


def adjacency_from_laplacian(laplacian, tol: float = 1e-12) -> np.ndarray:
    """Recover W from a Laplacian after checking zero row sums and nonpositive off-diagonals."""
    L = np.asarray(laplacian, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DimensionError(f"Laplacian must be square, got shape {L.shape}")
    off = L - np.diag(np.diag(L))
    if np.any(off > tol):
        i, j = np.argwhere(off > tol)[0]
        raise InvalidLaplacianError(f"positive off-diagonal entry L[{i},{j}] = {L[i, j]}")
    rows = L.sum(axis=1)
    scale = max(1.0, float(np.abs(L).max(initial=0.0)))
    bad = np.flatnonzero(np.abs(rows) > tol * scale)
    if bad.size:
        i = int(bad[0])
        raise InvalidLaplacianError(f"row {i} of the Laplacian sums to {rows[i]}, expected 0")
    return -off


def build_topology(adjacency, leader_weights) -> Topology:
    W = np.asarray(adjacency, dtype=float)
    K = np.asarray(leader_weights, dtype=float).reshape(-1)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] == 0:
        raise DimensionError(f"adjacency must be a nonempty square matrix, got shape {W.shape}")
    n = W.shape[0]
    if K.shape[0] != n:
        raise DimensionError(f"leader_weights has {K.shape[0]} entries for {n} followers")
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(K))):
        raise TopologyError("graph weights must be finite")
    if np.any(np.abs(W - W.T) > SYMMETRY_TOL):
        i, j = np.argwhere(np.abs(W - W.T) > SYMMETRY_TOL)[0]
        raise AsymmetricAdjacencyError(f"w[{i},{j}] = {W[i, j]} but w[{j},{i}] = {W[j, i]}")
    if np.any(W < 0):
        raise NegativeWeightError("adjacency weights must be nonnegative")
    if np.any(np.diag(W) != 0):
        raise SelfLoopError("adjacency diagonal must be zero (no self-loops)")
    if np.any(K < 0):
        raise NegativeWeightError("leader weights must be nonnegative")
    if not np.any(K > 0):
        raise NoLeaderLinkError("at least one follower must be connected to the leader")

    W = 0.5 * (W + W.T)
    L = laplacian_from_adjacency(W)
    H = L + np.diag(K)
    return Topology(n, _freeze(W), _freeze(L), _freeze(K), _freeze(H))


def topology_from_laplacian(laplacian, leader_weights) -> Topology:
    return build_topology(adjacency_from_laplacian(laplacian), leader_weights)


def is_connected(t: Topology) -> bool:
    """Breadth-first reachability from vertex 0 over edges with nonzero weight."""
    n = t.n_followers
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(t.adjacency[i] != 0):
            if j not in seen:
                seen.add(int(j))
                queue.append(int(j))
    return len(seen) == n


def _eigvalsh(M: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.eigvalsh(M)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"symmetric eigensolver did not converge: {exc}") from exc


def spectral_certificate(t: Topology) -> SpectralFacts:
    lam_l = _eigvalsh(t.laplacian)
    lam_h = _eigvalsh(t.h_matrix)
    scale = max(float(np.abs(lam_l).max(initial=0.0)), 1.0)
    zeros = int(np.sum(np.abs(lam_l) < ZERO_EIG_RTOL * scale))
    connected = is_connected(t)
    return SpectralFacts(
        laplacian_eigenvalues=lam_l,
        h_eigenvalues=lam_h,
        zero_eigenvalue_count=zeros,
        connected=connected,
        simple_zero_eigenvalue=zeros == 1,
        h_positive_definite=bool(lam_h[0] > ZERO_EIG_RTOL * max(float(np.abs(lam_h).max()), 1.0)),
    )
