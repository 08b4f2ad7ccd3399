"""Communication graphs, Metropolis mixing matrices and their spectral constants."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import rng as rngmod
from .errors import InvariantViolation, TopologyError

ER_MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class Topology:
    """Undirected connected graph on ``n_agents`` nodes; edges stored as (i, j) with i < j."""

    n_agents: int
    edges: frozenset

    def __post_init__(self):
        if self.n_agents < 1:
            raise TopologyError("need at least one agent")
        edges = frozenset((min(i, j), max(i, j)) for i, j in self.edges)
        for i, j in edges:
            if i == j:
                raise TopologyError(f"self-loop at node {i}")
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise TopologyError(f"edge ({i}, {j}) out of range")
        object.__setattr__(self, "edges", edges)
        if not _is_connected(self.n_agents, edges):
            raise TopologyError("graph is not connected")

    def degrees(self):
        d = np.zeros(self.n_agents, dtype=int)
        for i, j in self.edges:
            d[i] += 1
            d[j] += 1
        return d

    def to_json(self):
        return {"n_agents": self.n_agents, "edges": sorted(list(e) for e in self.edges)}


def _is_connected(n, edges):
    if n == 1:
        return True
    if not edges:
        return False
    i, j = np.array(sorted(edges)).T
    A = csr_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    ncomp, _ = connected_components(A, directed=False)
    return ncomp == 1


def build_topology(kind, n_agents, seed=0, p=0.2):
    """Build a ring, Erdos-Renyi or complete graph.

    Erdos-Renyi graphs that come out disconnected are redrawn with the seed
    incremented by one, up to ``ER_MAX_ATTEMPTS`` times.
    """
    N = int(n_agents)
    if N < 2:
        raise TopologyError("need at least two agents")
    if kind == "ring":
        return Topology(N, frozenset((i, (i + 1) % N) for i in range(N)))
    if kind == "complete":
        return Topology(N, frozenset((i, j) for i in range(N) for j in range(i + 1, N)))
    if kind in ("erdos_renyi", "er"):
        if not 0 < p <= 1:
            raise TopologyError(f"edge probability must be in (0, 1], got {p}")
        iu, ju = np.triu_indices(N, k=1)
        for attempt in range(ER_MAX_ATTEMPTS):
            gen = rngmod.stream(seed + attempt, rngmod.TOPOLOGY, N)
            keep = gen.random(iu.size) < p
            edges = frozenset(zip(iu[keep].tolist(), ju[keep].tolist()))
            if _is_connected(N, edges):
                return Topology(N, edges)
        raise TopologyError(f"no connected Erdos-Renyi graph after {ER_MAX_ATTEMPTS} attempts")
    raise TopologyError(f"unknown topology kind {kind!r}")


def metropolis_weights(topo, epsilon=0.5):
    """Metropolis rule: w_ij = 1 / (max(d_i, d_j) + epsilon) on edges, rows completed on the diagonal."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    N = topo.n_agents
    d = topo.degrees()
    W = np.zeros((N, N))
    for i, j in topo.edges:
        W[i, j] = W[j, i] = 1.0 / (max(d[i], d[j]) + epsilon)
    W[np.diag_indices(N)] = 1.0 - W.sum(axis=1)
    return W


def check_weight_matrix(W, tol=1e-12):
    W = np.asarray(W, dtype=float)
    N = W.shape[0]
    if W.shape != (N, N):
        raise InvariantViolation("weight matrix must be square")
    if np.max(np.abs(W - W.T)) > tol:
        raise InvariantViolation("weight matrix is not symmetric")
    if np.min(W) < 0:
        raise InvariantViolation("weight matrix has negative entries")
    if np.max(np.abs(W.sum(axis=1) - 1.0)) > tol:
        raise InvariantViolation("rows do not sum to one")
    return W


def sigma2(W):
    """Spectral norm of W - (1/N) 11^T (second largest singular value of W)."""
    W = np.asarray(W, dtype=float)
    N = W.shape[0]
    D = W - np.full((N, N), 1.0 / N)
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (D + D.T)))))


def mixing_power(W, t):
    if t < 1:
        raise ValueError("t must be >= 1")
    return np.linalg.matrix_power(np.asarray(W, dtype=float), int(t))


def consensus_steps_for(s, N):
    """Smallest integer t >= 1 with s^t <= 1 / (5 sqrt(N)) for a mixing rate s in [0, 1)."""
    if s <= 0.0:
        return 1
    if s >= 1.0:
        raise ValueError("mixing rate must be < 1 (graph disconnected?)")
    target = 1.0 / (5.0 * math.sqrt(N))
    t = max(1, math.ceil(math.log(target) / math.log(s)))
    # guard the ceiling against rounding in the logarithms
    while s**t > target:
        t += 1
    while t > 1 and s ** (t - 1) <= target:
        t -= 1
    return t


def min_consensus_steps(W, N=None):
    """Consensus rounds needed so that sigma2(W)^t <= 1 / (5 sqrt(N))."""
    W = np.asarray(W, dtype=float)
    return consensus_steps_for(sigma2(W), W.shape[0] if N is None else N)


def lt_constant(W, t=1):
    """L_t = 1 - lambda_min(W^t), which lies in (0, 2] for a valid W."""
    lam = np.linalg.eigvalsh(mixing_power(W, t))
    val = float(1.0 - lam[0])
    if not 0.0 < val <= 2.0 + 1e-12:
        raise InvariantViolation(f"L_t = {val} outside (0, 2]; weight matrix is invalid")
    return val
