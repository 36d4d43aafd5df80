"""Consensus-type dynamics of the coupled population means.

Two forms are built:

* ``full-stacked`` — the faithful closed loop of every population's full
  mean state. Per agent, dm_k/dt = A_cl m_k - K rho_k + b0 with
  A_cl = A - G Phi', K = G Ztilde Q, b0 = G Ztilde Phi' C + C, and
  rho_k the neighbor average. Stacked, M = I (x) A_cl - P (x) K.

* ``isolated-c`` — the capacity-only reduction with a graph-Laplacian
  coupling, using per-block extractions of Phi, Ztilde and Q. The
  multiplier vector entering the offset is frozen at a supplied value.
  By default the neighbor-average dependence inside the offset is folded
  into M (it is a state functional); a literal mode keeps it frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import SystemMatrices
from .errors import DimensionMismatchError, InvalidParamsError
from .linalg import LinearSolver, as_vector
from .macro_net import AggregationOperator, MacroTopology
from .mfg import ControlMatrix, MfgPenalties, ValueCoeffs

FORM_FULL_STACKED = "full-stacked"
FORM_ISOLATED_C = "isolated-c"

#: refuse to materialize dense stacked matrices above this dimension
DENSE_LIMIT = 6000


@dataclass(frozen=True)
class ConsensusSystem:
    """Affine population dynamics dm/dt = M m + b in Kronecker factors.

    ``M`` is kron(I_p, diag_block) + kron(P, coupling_block); ``b`` repeats
    ``b_block`` for every agent.
    """

    form: str
    p: int
    block_dim: int
    diag_block: np.ndarray  # (d, d)
    coupling_block: np.ndarray  # (d, d), multiplies the neighbor average
    b_block: np.ndarray  # (d,)
    P: np.ndarray  # (p, p) averaging operator
    laplacian_block: np.ndarray | None = None  # isolated-c only

    @property
    def dim(self) -> int:
        return self.p * self.block_dim

    def matrix(self) -> np.ndarray:
        if self.dim > DENSE_LIMIT:
            raise MemoryError(
                f"stacked dimension {self.dim} too large to materialize"
            )
        return np.kron(np.eye(self.p), self.diag_block) + np.kron(
            self.P, self.coupling_block
        )

    def offset(self) -> np.ndarray:
        return np.tile(self.b_block, self.p)


def build_consensus_system(
    topo: MacroTopology,
    sys: SystemMatrices,
    B_ctrl: ControlMatrix,
    pen: MfgPenalties,
    coeffs: ValueCoeffs,
    form: str = FORM_FULL_STACKED,
    mu_freeze=None,
    rho_freeze=None,
    fold_rho: bool = True,
) -> ConsensusSystem:
    if topo.p < 2:
        raise InvalidParamsError("need at least two agents for neighbor averaging")
    P = AggregationOperator.from_topology(topo).P
    A = sys.A
    d = A.shape[0]
    G = B_ctrl.B @ np.linalg.solve(pen.R, B_ctrl.B.T)
    Zsolve = LinearSolver(A.T - 2.0 * coeffs.Phi @ G)
    Ztilde = Zsolve.solve(np.eye(d))

    if form == FORM_FULL_STACKED:
        A_cl = A - G @ coeffs.Phi.T
        K = G @ Ztilde @ pen.Q
        b0 = G @ Ztilde @ (coeffs.Phi.T @ sys.C) + sys.C
        return ConsensusSystem(
            form=form,
            p=topo.p,
            block_dim=d,
            diag_block=A_cl,
            coupling_block=-K,
            b_block=b0,
            P=P,
        )

    if form != FORM_ISOLATED_C:
        raise ValueError(f"unknown consensus form {form!r}")

    lay = sys.layout
    m = lay.m
    if mu_freeze is None:
        raise ValueError("isolated-c form needs a frozen multiplier vector")
    mu = as_vector(mu_freeze, "mu_freeze")
    if mu.shape[0] != m:
        raise DimensionMismatchError("mu_freeze must have one entry per edge")
    Phi_c = coeffs.Phi[lay.c, lay.c]
    Z_c = Ztilde[lay.c, lay.c]
    Q_c = pen.Q[lay.c, lay.c]
    G_c = G[lay.c, lay.c]
    Q1 = -A[lay.c, lay.c]  # capacity damping block of the saddle matrix
    f1 = -sys.C[lay.c]
    lap_block = G_c @ Phi_c.T
    delta_rho_coeff = -G_c @ (Z_c @ Q_c + Phi_c.T)
    b_const = G_c @ (Z_c @ Phi_c.T @ mu) + (mu - f1)
    if fold_rho:
        diag_block = -Q1 - lap_block
        coupling = lap_block + delta_rho_coeff
        b_block = b_const
    else:
        if rho_freeze is None:
            raise ValueError("literal isolated-c form needs rho_freeze")
        rho = as_vector(rho_freeze, "rho_freeze")
        if rho.shape[0] != m:
            raise DimensionMismatchError("rho_freeze must have one entry per edge")
        diag_block = -Q1 - lap_block
        coupling = lap_block
        b_block = b_const + delta_rho_coeff @ rho
    return ConsensusSystem(
        form=form,
        p=topo.p,
        block_dim=m,
        diag_block=diag_block,
        coupling_block=coupling,
        b_block=b_block,
        P=P,
        laplacian_block=lap_block,
    )


def consensus_laplacian(cs: ConsensusSystem) -> np.ndarray:
    """The graph-Laplacian coupling L with L_kk = G_c Phi_c' and
    L_kj = -(1/|N(k)|) G_c Phi_c' for neighbors; its kernel contains every
    consensus configuration 1 (x) w."""
    if cs.form != FORM_ISOLATED_C or cs.laplacian_block is None:
        raise ValueError("Laplacian view applies to the isolated-c form")
    return np.kron(np.eye(cs.p) - cs.P, cs.laplacian_block)


def consensus_equilibrium(cs: ConsensusSystem, tol: float = 1e-10) -> np.ndarray:
    """Solve M m* + b = 0, returning m* as a (p, d) array."""
    if cs.dim <= DENSE_LIMIT:
        M = cs.matrix()
        b = cs.offset()
        m = LinearSolver(M).solve(-b)
        res = np.abs(M @ m + b).max()
        if res > tol * (1.0 + np.abs(b).max()):
            raise ArithmeticError(f"equilibrium residual {res:.3e} above tolerance")
        return m.reshape(cs.p, cs.block_dim)
    # identical offsets admit a uniform equilibrium: (diag + coupling) m0 = -b
    m0 = LinearSolver(cs.diag_block + cs.coupling_block).solve(-cs.b_block)
    return np.broadcast_to(m0, (cs.p, cs.block_dim)).copy()


@dataclass(frozen=True)
class ConvergenceReport:
    hurwitz: bool
    spectral_abscissa: float
    predicted_rate: float  # decay rate of the slowest mode; <= 0 means none

    def time_constant(self) -> float:
        return np.inf if self.predicted_rate <= 0 else 1.0 / self.predicted_rate


def verify_convergence(cs: ConsensusSystem) -> ConvergenceReport:
    """Hurwitz verdict via the Kronecker structure: the spectrum of M is the
    union over eigenvalues theta of P of spec(diag_block + theta *
    coupling_block), since P is diagonalizable (similar to a symmetric
    matrix)."""
    thetas = np.linalg.eigvals(cs.P)
    abscissa = -np.inf
    for theta in thetas:
        _, a = _abscissa(cs.diag_block + theta * cs.coupling_block)
        abscissa = max(abscissa, a)
    return ConvergenceReport(
        hurwitz=abscissa < 0.0,
        spectral_abscissa=float(abscissa),
        predicted_rate=float(-abscissa),
    )


def _abscissa(M) -> tuple[bool, float]:
    eigs = np.linalg.eigvals(M)
    a = float(eigs.real.max())
    return a < 0, a
