"""Physical flow network: incidence validation, quadratic costs, KKT
machinery, and a brute-force active-set oracle for the deterministic
capacity/flow program.

The program solved by the oracle is

    min  c'Q1c/2 + f1'c + u'Q2u/2 + f2'u
    s.t. B u = w,   u <= c,   u >= 0,   c >= 0,

with diagonal positive-definite Q1, Q2. Strict positivity of u, c is
relaxed to nonnegativity so that degenerate instances (w = 0) keep a
minimizer.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .errors import (
    DimensionMismatchError,
    EnumerationGuardError,
    InfeasibleError,
    InvalidIncidenceError,
    NotComparableError,
)
from .linalg import as_matrix, as_vector

#: largest edge count accepted by the enumeration oracle
ENUMERATION_GUARD_EDGES = 20
#: largest number of active-set patterns the oracle will visit
ENUMERATION_GUARD_PATTERNS = 2**20


@dataclass(frozen=True)
class MicroNetwork:
    """Validated flow graph with node-edge incidence matrix."""

    incidence: np.ndarray  # (n, m), entries in {-1, 0, +1}
    sink_nodes: tuple[int, ...]
    edge_labels: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.incidence.shape[0]

    @property
    def m(self) -> int:
        return self.incidence.shape[1]


def build_micro_network(incidence, sink_nodes=(), edge_labels=None) -> MicroNetwork:
    """Validate an incidence matrix: each column carries at most one +1 and
    one -1, no all-zero columns, at least two nodes and one edge."""
    B = as_matrix(incidence, "incidence")
    n, m = B.shape
    if n < 2 or m < 1:
        raise InvalidIncidenceError(f"need n >= 2 and m >= 1, got n={n}, m={m}")
    if not np.all(np.isin(B, (-1.0, 0.0, 1.0))):
        raise InvalidIncidenceError("incidence entries must be in {-1, 0, +1}")
    for j in range(m):
        col = B[:, j]
        if np.count_nonzero(col == 1.0) > 1 or np.count_nonzero(col == -1.0) > 1:
            raise InvalidIncidenceError(f"column {j} has duplicate signs")
        if not col.any():
            raise InvalidIncidenceError(f"column {j} is all zero")
    sinks = tuple(int(s) for s in sink_nodes)
    if any(not 0 <= s < n for s in sinks):
        raise InvalidIncidenceError("sink node index out of range")
    if edge_labels is None:
        edge_labels = tuple(f"e{j + 1}" for j in range(m))
    else:
        edge_labels = tuple(str(s) for s in edge_labels)
        if len(edge_labels) != m:
            raise InvalidIncidenceError("edge label count does not match edges")
    return MicroNetwork(incidence=B, sink_nodes=sinks, edge_labels=edge_labels)


@dataclass(frozen=True)
class CostParams:
    """Diagonal quadratic costs for capacity (q1, f1) and flow (q2, f2)."""

    q1: np.ndarray  # (m,) diagonal of Q1, >= 0
    q2: np.ndarray  # (m,) diagonal of Q2, >= 0
    f1: np.ndarray  # (m,)
    f2: np.ndarray  # (m,)

    def __post_init__(self):
        for name in ("q1", "q2", "f1", "f2"):
            object.__setattr__(self, name, as_vector(getattr(self, name), name))
        if len({v.shape[0] for v in (self.q1, self.q2, self.f1, self.f2)}) != 1:
            raise DimensionMismatchError("cost vectors must share one length")
        if (self.q1 < 0).any() or (self.q2 < 0).any():
            raise ValueError("q1 and q2 must be nonnegative")

    @property
    def m(self) -> int:
        return self.q1.shape[0]

    def Q1(self) -> np.ndarray:
        return np.diag(self.q1)

    def Q2(self) -> np.ndarray:
        return np.diag(self.q2)

    def capacity_cost(self, c) -> float:
        c = np.asarray(c, dtype=float)
        return float(0.5 * c @ (self.q1 * c) + self.f1 @ c)

    def flow_cost(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ (self.q2 * u) + self.f2 @ u)

    def total_cost(self, u, c) -> float:
        return self.capacity_cost(c) + self.flow_cost(u)


def validate_demand(net: MicroNetwork, w) -> np.ndarray:
    """Demand vectors live on sink nodes only."""
    w = as_vector(w, "demand")
    if w.shape[0] != net.n:
        raise DimensionMismatchError(f"demand length {w.shape[0]} != n={net.n}")
    off_sinks = np.setdiff1d(np.arange(net.n), np.asarray(net.sink_nodes, dtype=int))
    if w[off_sinks].any():
        raise ValueError("demand must be zero on non-sink nodes")
    return w


def flow_balance_residual(net: MicroNetwork, u, w) -> np.ndarray:
    """Residual B u - w of the flow conservation constraint."""
    u = as_vector(u, "u")
    w = as_vector(w, "w")
    if u.shape[0] != net.m or w.shape[0] != net.n:
        raise DimensionMismatchError("flow/demand dimensions do not match network")
    return net.incidence @ u - w


@dataclass(frozen=True)
class KktResidual:
    stationarity_u: np.ndarray
    stationarity_c: np.ndarray
    primal_eq: np.ndarray
    primal_ineq_violation: np.ndarray
    complementarity: np.ndarray
    dual_sign_violation: np.ndarray

    def max_abs(self) -> float:
        return max(
            float(np.abs(block).max(initial=0.0))
            for block in (
                self.stationarity_u,
                self.stationarity_c,
                self.primal_eq,
                self.primal_ineq_violation,
                self.complementarity,
                self.dual_sign_violation,
            )
        )


def kkt_residual(
    net: MicroNetwork, costs: CostParams, x, w, bound_tol: float = 1e-9
) -> KktResidual:
    """First-order optimality residual blocks at a stacked point.

    ``x`` is anything exposing u, c, lam, mu attributes (a stacked state or
    a QP solution). Stationarity is bound-aware: at a coordinate pinned to
    its nonnegativity bound the implicit bound multiplier absorbs any
    outward-pointing component, so only the inward-pointing part counts as
    a residual.
    """
    u = as_vector(x.u, "u")
    c = as_vector(x.c, "c")
    lam = as_vector(x.lam, "lam")
    mu = as_vector(x.mu, "mu")
    w = as_vector(w, "w")
    B = net.incidence
    stat_u = mu + B.T @ lam + costs.q2 * u + costs.f2
    stat_c = costs.q1 * c + costs.f1 - mu
    at_u0 = np.abs(u) <= bound_tol
    at_c0 = np.abs(c) <= bound_tol
    stat_u = np.where(at_u0, np.minimum(stat_u, 0.0), stat_u)
    stat_c = np.where(at_c0, np.minimum(stat_c, 0.0), stat_c)
    return KktResidual(
        stationarity_u=stat_u,
        stationarity_c=stat_c,
        primal_eq=B @ u - w,
        primal_ineq_violation=np.maximum(u - c, 0.0),
        complementarity=mu * (u - c),
        dual_sign_violation=np.maximum(-mu, 0.0),
    )


@dataclass(frozen=True)
class QpSolution:
    u: np.ndarray
    c: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    objective: float
    active_set: frozenset


# per-edge active-set patterns: which of {u=0, u=c, c interior-stationary}
# hold; "c interior" pins c at its unconstrained minimizer -f1/q1
_PAT_UC = "u=c"  # capacity binds
_PAT_FREE = "interior"  # 0 < u < c, c at unconstrained minimum
_PAT_U0 = "u=0"  # flow at zero, c at unconstrained minimum
_PAT_U0C0 = "u=0,c=0"  # both at zero


def _edge_patterns(costs: CostParams):
    """Candidate patterns per edge, pruned by the sign of the unconstrained
    capacity minimizer. With f1 > 0 this collapses to {u=c, u=0=c}."""
    pats = []
    for i in range(costs.m):
        cbar = -costs.f1[i] / costs.q1[i]
        opts = [_PAT_UC, _PAT_U0C0]
        if cbar > 0:
            opts.append(_PAT_FREE)
            opts.append(_PAT_U0)
        pats.append(opts)
    return pats


def _feasible_flow_exists(net: MicroNetwork, w) -> bool:
    res = scipy.optimize.linprog(
        c=np.zeros(net.m),
        A_eq=net.incidence,
        b_eq=w,
        bounds=[(0, None)] * net.m,
        method="highs",
    )
    return bool(res.status == 0)


def solve_deterministic_qp(
    net: MicroNetwork, costs: CostParams, w, tol: float = 1e-9
) -> QpSolution:
    """Exact minimizer by enumeration of per-edge active-set patterns.

    Each pattern fixes an affine set; the restricted equality-constrained QP
    is solved through its KKT linear system and the best primal-feasible
    candidate wins. Strict convexity (diagonal PD Q1, Q2) makes the
    restricted stationary point the restricted minimizer, so the pattern
    realized at the true optimum reproduces it exactly.
    """
    w = as_vector(w, "w")
    if w.shape[0] != net.n:
        raise DimensionMismatchError("demand length does not match node count")
    m, n = net.m, net.n
    if costs.m != m:
        raise DimensionMismatchError("cost dimension does not match edge count")
    if (costs.q1 <= 0).any() or (costs.q2 <= 0).any():
        raise ValueError("oracle requires strictly positive diagonal Q1, Q2")
    if m > ENUMERATION_GUARD_EDGES:
        raise EnumerationGuardError(
            f"m={m} exceeds enumeration guard {ENUMERATION_GUARD_EDGES}"
        )
    patterns = _edge_patterns(costs)
    total = np.prod([len(p) for p in patterns])
    if total > ENUMERATION_GUARD_PATTERNS:
        raise EnumerationGuardError(f"{total} patterns exceed the enumeration guard")

    if not _feasible_flow_exists(net, w):
        raise InfeasibleError("no nonnegative flow satisfies B u = w")

    B = net.incidence
    cbar = np.where(costs.q1 > 0, -costs.f1 / np.where(costs.q1 > 0, costs.q1, 1.0), 0.0)
    best = None

    for combo in itertools.product(*patterns):
        free = [i for i, p in enumerate(combo) if p in (_PAT_UC, _PAT_FREE)]
        u = np.zeros(m)
        c = np.zeros(m)
        for i, p in enumerate(combo):
            if p in (_PAT_FREE, _PAT_U0):
                c[i] = cbar[i]
        if free:
            # curvature of the flow-only objective; u=c edges absorb the
            # capacity quadratic
            d = np.array(
                [
                    costs.q2[i] + (costs.q1[i] if combo[i] == _PAT_UC else 0.0)
                    for i in free
                ]
            )
            g = np.array(
                [
                    costs.f2[i] + (costs.f1[i] if combo[i] == _PAT_UC else 0.0)
                    for i in free
                ]
            )
            Bf = B[:, free]
            nf = len(free)
            K = np.zeros((nf + n, nf + n))
            K[:nf, :nf] = np.diag(d)
            K[:nf, nf:] = Bf.T
            K[nf:, :nf] = Bf
            rhs = np.concatenate([-g, w])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
                if np.abs(K @ sol - rhs).max() > 1e-8 * (1.0 + np.abs(rhs).max()):
                    continue
            uf = sol[:nf]
            lam = sol[nf:]
            u[free] = uf
            for i in free:
                if combo[i] == _PAT_UC:
                    c[i] = u[i]
        else:
            if np.abs(w).max(initial=0.0) > tol:
                continue
            lam_sol, *_ = np.linalg.lstsq(B.T, -(costs.f2 + costs.q2 * u), rcond=None)
            lam = lam_sol

        # primal feasibility of the candidate
        if (u < -tol).any() or (c < -tol).any() or (u - c > tol).any():
            continue
        if np.abs(B @ u - w).max(initial=0.0) > 1e-7 * (1.0 + np.abs(w).max(initial=0.0)):
            continue

        obj = costs.total_cost(u, c)
        if best is None or obj < best[0] - 1e-12:
            best = (obj, u.copy(), c.copy(), lam.copy(), combo)

    if best is None:
        raise InfeasibleError("active-set enumeration found no feasible candidate")

    obj, u, c, lam, combo = best
    u = np.maximum(u, 0.0)
    c = np.maximum(c, u)
    mu = np.zeros(m)
    active = set()
    Btlam = B.T @ lam
    for i, p in enumerate(combo):
        if p == _PAT_UC:
            mu[i] = costs.q1[i] * c[i] + costs.f1[i]
            active.add(("u<=c", i))
        elif p == _PAT_U0:
            active.add(("u>=0", i))
        elif p == _PAT_U0C0:
            # pick mu to zero the flow stationarity when the sign allows it
            mu[i] = max(0.0, -(costs.f2[i] + Btlam[i]))
            active.update({("u>=0", i), ("c>=0", i)})
    return QpSolution(
        u=u, c=c, lam=lam, mu=mu, objective=float(obj), active_set=frozenset(active)
    )


def suboptimality_gap(
    u,
    c,
    oracle: QpSolution,
    costs: CostParams,
    net: MicroNetwork,
    w,
    feas_tol: float = 1e-6,
) -> float:
    """Objective excess of a heuristic (u, c) over the oracle optimum."""
    u = as_vector(u, "u")
    c = as_vector(c, "c")
    w = as_vector(w, "w")
    violations = {}
    eq = np.abs(flow_balance_residual(net, u, w)).max(initial=0.0)
    if eq > feas_tol:
        violations["flow balance"] = eq
    neg_u = float(np.maximum(-u, 0.0).max(initial=0.0))
    if neg_u > feas_tol:
        violations["u >= 0"] = neg_u
    neg_c = float(np.maximum(-c, 0.0).max(initial=0.0))
    if neg_c > feas_tol:
        violations["c >= 0"] = neg_c
    cap = float(np.maximum(u - c, 0.0).max(initial=0.0))
    if cap > feas_tol:
        violations["u <= c"] = cap
    if violations:
        raise NotComparableError(f"heuristic point infeasible: {violations}")
    return costs.total_cost(u, c) - oracle.objective
