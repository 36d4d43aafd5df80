"""Stacked primal-dual system: block assembly and projected saddle flow.

The stacked state is x = (u, c, lam, mu) with dimension 3m + n. The drift
is affine, dx/dt = A x + C, where A couples the blocks through the
incidence matrix and C carries the linear costs and the demand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError
from .linalg import as_vector
from .micro import CostParams, KktResidual, MicroNetwork, kkt_residual

#: divergence guard on the sup norm of the state during integration
DIVERGENCE_BOUND = 1e9


@dataclass(frozen=True)
class BlockLayout:
    """Index bookkeeping for the (u, c, lam, mu) stacking."""

    m: int
    n: int

    @property
    def dim(self) -> int:
        return 3 * self.m + self.n

    @property
    def u(self) -> slice:
        return slice(0, self.m)

    @property
    def c(self) -> slice:
        return slice(self.m, 2 * self.m)

    @property
    def lam(self) -> slice:
        return slice(2 * self.m, 2 * self.m + self.n)

    @property
    def mu(self) -> slice:
        return slice(2 * self.m + self.n, 3 * self.m + self.n)

    def nonneg_mask(self) -> np.ndarray:
        """Coordinates clamped by the positive-orthant projection."""
        mask = np.ones(self.dim, dtype=bool)
        mask[self.lam] = False
        return mask


@dataclass(frozen=True)
class StackedState:
    """Immutable stacked vector with block views."""

    vec: np.ndarray
    layout: BlockLayout

    def __post_init__(self):
        v = as_vector(self.vec, "state")
        if v.shape[0] != self.layout.dim:
            raise DimensionMismatchError(
                f"state length {v.shape[0]} != layout dimension {self.layout.dim}"
            )
        object.__setattr__(self, "vec", v)

    @classmethod
    def from_blocks(cls, u, c, lam, mu) -> "StackedState":
        u, c, lam, mu = (as_vector(b) for b in (u, c, lam, mu))
        if u.shape != c.shape or u.shape != mu.shape:
            raise DimensionMismatchError("u, c, mu must share one length")
        layout = BlockLayout(m=u.shape[0], n=lam.shape[0])
        return cls(vec=np.concatenate([u, c, lam, mu]), layout=layout)

    @classmethod
    def zeros(cls, layout: BlockLayout) -> "StackedState":
        return cls(vec=np.zeros(layout.dim), layout=layout)

    @property
    def u(self) -> np.ndarray:
        return self.vec[self.layout.u]

    @property
    def c(self) -> np.ndarray:
        return self.vec[self.layout.c]

    @property
    def lam(self) -> np.ndarray:
        return self.vec[self.layout.lam]

    @property
    def mu(self) -> np.ndarray:
        return self.vec[self.layout.mu]


@dataclass(frozen=True)
class SystemMatrices:
    """Affine drift (A, C) of the stacked primal-dual flow."""

    A: np.ndarray
    C: np.ndarray
    layout: BlockLayout

    @property
    def demand_slice(self) -> slice:
        """Slice of C carrying -w."""
        return self.layout.lam

    def with_demand(self, w) -> "SystemMatrices":
        """Refresh only the demand block of C."""
        w = as_vector(w, "w")
        if w.shape[0] != self.layout.n:
            raise DimensionMismatchError("demand length does not match layout")
        C = self.C.copy()
        C[self.demand_slice] = -w
        return SystemMatrices(A=self.A, C=C, layout=self.layout)


def assemble_system(net: MicroNetwork, costs: CostParams, w) -> SystemMatrices:
    """Build the saddle matrix

        A = [[-Q2,   0, -B', -I],
             [  0, -Q1,   0,  I],
             [  B,   0,   0,  0],
             [  I,  -I,   0,  0]]

    and the offset C = (-f2, -f1, -w, 0)."""
    w = as_vector(w, "w")
    m, n = net.m, net.n
    if costs.m != m:
        raise DimensionMismatchError("cost dimension does not match edge count")
    if w.shape[0] != n:
        raise DimensionMismatchError("demand length does not match node count")
    layout = BlockLayout(m=m, n=n)
    B = net.incidence
    I = np.eye(m)
    A = np.zeros((layout.dim, layout.dim))
    A[layout.u, layout.u] = -np.diag(costs.q2)
    A[layout.u, layout.lam] = -B.T
    A[layout.u, layout.mu] = -I
    A[layout.c, layout.c] = -np.diag(costs.q1)
    A[layout.c, layout.mu] = I
    A[layout.lam, layout.u] = B
    A[layout.mu, layout.u] = I
    A[layout.mu, layout.c] = -I
    C = np.concatenate([-costs.f2, -costs.f1, -w, np.zeros(m)])
    return SystemMatrices(A=A, C=C, layout=layout)


def pd_step(
    sys: SystemMatrices, x: StackedState, dt: float, projected: bool = True
) -> StackedState:
    """One explicit Euler step; when projected, clamp u, c, mu to the
    positive orthant after the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = x.vec + dt * (sys.A @ x.vec + sys.C)
    if projected:
        mask = sys.layout.nonneg_mask()
        y[mask] = np.maximum(y[mask], 0.0)
    return StackedState(vec=y, layout=sys.layout)


@dataclass(frozen=True)
class PdRunResult:
    state: StackedState
    steps_taken: int
    converged: bool
    drift_sup: float  # ||x' - x||_inf / dt at the last step
    kkt: KktResidual
    trajectory: np.ndarray  # (records, dim) subsampled iterates
    record_times: np.ndarray


def pd_run(
    sys: SystemMatrices,
    net: MicroNetwork,
    costs: CostParams,
    w,
    x0: StackedState,
    dt: float = 1e-3,
    max_steps: int = 1_000_000,
    stop_tol: float = 1e-6,
    projected: bool = True,
    record_every: int | None = None,
) -> PdRunResult:
    """Iterate the projected flow until the per-step movement rate drops
    below ``stop_tol`` or the step budget runs out. The best iterate and a
    KKT report are returned either way; ``converged`` distinguishes the two
    exits."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    w = as_vector(w, "w")
    if record_every is None:
        record_every = max(1, max_steps // 1000)
    mask = sys.layout.nonneg_mask()
    x = x0.vec.copy()
    if projected:
        x[mask] = np.maximum(x[mask], 0.0)
    records = [x.copy()]
    record_times = [0.0]
    A, C = sys.A, sys.C
    converged = False
    rate = np.inf
    steps = 0
    for k in range(1, max_steps + 1):
        y = x + dt * (A @ x + C)
        if projected:
            y[mask] = np.maximum(y[mask], 0.0)
        rate = float(np.abs(y - x).max()) / dt
        x = y
        steps = k
        if np.abs(x).max() > DIVERGENCE_BOUND:
            raise FloatingPointError("primal-dual trajectory diverged")
        if k % record_every == 0:
            records.append(x.copy())
            record_times.append(k * dt)
        if rate <= stop_tol:
            converged = True
            break
    if steps % record_every != 0:
        records.append(x.copy())
        record_times.append(steps * dt)
    state = StackedState(vec=x, layout=sys.layout)
    return PdRunResult(
        state=state,
        steps_taken=steps,
        converged=converged,
        drift_sup=rate,
        kkt=kkt_residual(net, costs, state, w),
        trajectory=np.asarray(records),
        record_times=np.asarray(record_times),
    )
