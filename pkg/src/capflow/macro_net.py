"""Communication topology between agent populations and the neighbor
averaging operator producing the aggregate objective of each agent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidParamsError


@dataclass(frozen=True)
class MacroTopology:
    """Undirected, connected, loop-free agent graph."""

    adjacency: np.ndarray  # (p, p) bool, symmetric, zero diagonal

    def __post_init__(self):
        A = np.asarray(self.adjacency, dtype=bool)
        object.__setattr__(self, "adjacency", A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatchError("adjacency must be square")
        if A.diagonal().any():
            raise InvalidParamsError("self-loops are not allowed")
        if not np.array_equal(A, A.T):
            raise InvalidParamsError("adjacency must be symmetric")
        deg = A.sum(axis=1)
        if (deg < 1).any():
            raise InvalidParamsError("every agent needs at least one neighbor")
        if not _connected(A):
            raise InvalidParamsError("topology must be connected")

    @property
    def p(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def neighbors(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[k])


def _connected(A: np.ndarray) -> bool:
    p = A.shape[0]
    seen = np.zeros(p, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        k = stack.pop()
        for j in np.flatnonzero(A[k]):
            if not seen[j]:
                seen[j] = True
                stack.append(j)
    return bool(seen.all())


def generate_scale_free(p: int, attach: int = 2, seed: int = 0) -> MacroTopology:
    """Preferential attachment starting from a complete seed of attach+1
    nodes; each new node connects to ``attach`` distinct existing nodes with
    probability proportional to current degree. Deterministic under seed;
    connected by construction."""
    if attach < 1 or p < attach + 1 or p < 2:
        raise InvalidParamsError(f"need p >= attach+1 >= 2, got p={p}, attach={attach}")
    rng = np.random.default_rng(seed)
    A = np.zeros((p, p), dtype=bool)
    clique = attach + 1
    for i in range(clique):
        for j in range(i + 1, clique):
            A[i, j] = A[j, i] = True
    deg = A.sum(axis=1).astype(float)
    for v in range(clique, p):
        probs = deg[:v] / deg[:v].sum()
        targets = rng.choice(v, size=attach, replace=False, p=probs)
        for t in targets:
            A[v, t] = A[t, v] = True
        deg[list(targets)] += 1.0
        deg[v] = attach
    return MacroTopology(adjacency=A)


def ring_topology(p: int) -> MacroTopology:
    if p < 3:
        raise InvalidParamsError("ring needs p >= 3")
    A = np.zeros((p, p), dtype=bool)
    idx = np.arange(p)
    A[idx, (idx + 1) % p] = True
    A[(idx + 1) % p, idx] = True
    return MacroTopology(adjacency=A)


def complete_topology(p: int) -> MacroTopology:
    if p < 2:
        raise InvalidParamsError("complete graph needs p >= 2")
    A = ~np.eye(p, dtype=bool)
    return MacroTopology(adjacency=A)


@dataclass(frozen=True)
class AggregationOperator:
    """Row-stochastic neighbor averaging matrix with zero diagonal."""

    P: np.ndarray

    @classmethod
    def from_topology(cls, topo: MacroTopology) -> "AggregationOperator":
        deg = topo.degrees.astype(float)
        P = topo.adjacency.astype(float) / deg[:, None]
        return cls(P=P)


def aggregate_rho(op: AggregationOperator, means) -> np.ndarray:
    """rho_k = average of neighbor means; accepts (p,) or (p, d) means."""
    means = np.asarray(means, dtype=float)
    if means.shape[0] != op.P.shape[0]:
        raise DimensionMismatchError("means must be indexed by agent")
    return op.P @ means


def laplacian_check(topo: MacroTopology) -> np.ndarray:
    """Normalized Laplacian I - P of the averaging operator; rows sum to
    zero exactly."""
    P = AggregationOperator.from_topology(topo).P
    return np.eye(topo.p) - P


def write_edge_list(topo: MacroTopology, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(topo.p):
            for j in range(i + 1, topo.p):
                if topo.adjacency[i, j]:
                    fh.write(f"{i} {j}\n")


def read_edge_list(path, p: int | None = None) -> MacroTopology:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            i, j = (int(tok) for tok in line.split())
            pairs.append((i, j))
    if not pairs:
        raise InvalidParamsError("edge list is empty")
    size = p if p is not None else max(max(i, j) for i, j in pairs) + 1
    A = np.zeros((size, size), dtype=bool)
    for i, j in pairs:
        A[i, j] = A[j, i] = True
    return MacroTopology(adjacency=A)
