"""Linear-quadratic mean-field layer: penalties, control matrix, stationary
value-function coefficients, optimal control, and mean-state propagation.

The value function of each population is quadratic,
sigma(x, t) = x'Phi x / 2 + H'x + chi, with Phi the stabilizing Riccati
solution and H the solution of the affine stationarity system

    [A' - 2 Phi B R^-1 B'] H = Q rho - Phi' C.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import BlockLayout, SystemMatrices
from .errors import DimensionMismatchError
from .linalg import CareConfig, LinearSolver, as_vector, solve_care

CONTROL_SCALAR_ON_C = "scalar-on-c"
CONTROL_PER_EDGE_ON_C = "per-edge-on-c"


@dataclass(frozen=True)
class MfgPenalties:
    """Diagonal state-deviation, control, and terminal penalties."""

    Q: np.ndarray  # (d, d) diagonal PSD
    R: np.ndarray  # (q, q) diagonal PD
    S: np.ndarray  # (d, d) diagonal PSD

    def __post_init__(self):
        for name in ("Q", "R", "S"):
            M = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, M)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise DimensionMismatchError(f"{name} must be square")
            if np.any(M != np.diag(np.diag(M))):
                raise ValueError(f"{name} must be diagonal")
        if np.diag(self.Q).min() < 0 or np.diag(self.S).min() < 0:
            raise ValueError("Q and S must be PSD")
        if np.diag(self.R).min() <= 0:
            raise ValueError("R must be strictly PD")


def build_penalties(
    layout: BlockLayout,
    q_weight: float,
    r_weight: float,
    s_weight: float = 0.0,
    mode: str = CONTROL_SCALAR_ON_C,
) -> MfgPenalties:
    """Q and S act on the capacity block only; R penalizes the control."""
    if q_weight < 0 or s_weight < 0:
        raise ValueError("q_weight and s_weight must be nonnegative")
    if r_weight <= 0:
        raise ValueError("r_weight must be positive")
    d = layout.dim
    qdiag = np.zeros(d)
    qdiag[layout.c] = q_weight
    sdiag = np.zeros(d)
    sdiag[layout.c] = s_weight
    q = 1 if mode == CONTROL_SCALAR_ON_C else layout.m
    return MfgPenalties(Q=np.diag(qdiag), R=r_weight * np.eye(q), S=np.diag(sdiag))


@dataclass(frozen=True)
class ControlMatrix:
    """Control enters the capacity block only."""

    B: np.ndarray  # (d, q)
    mode: str


def build_control_matrix(layout: BlockLayout, mode: str = CONTROL_SCALAR_ON_C) -> ControlMatrix:
    d = layout.dim
    if mode == CONTROL_SCALAR_ON_C:
        B = np.zeros((d, 1))
        B[layout.c, 0] = 1.0
    elif mode == CONTROL_PER_EDGE_ON_C:
        B = np.zeros((d, layout.m))
        B[layout.c, :] = np.eye(layout.m)
    else:
        raise ValueError(f"unknown control mode {mode!r}")
    return ControlMatrix(B=B, mode=mode)


@dataclass(frozen=True)
class ValueCoeffs:
    Phi: np.ndarray
    H: np.ndarray
    chi: float | None
    stationary: bool
    chi_rate: float = 0.0  # drift of chi when no stationary value exists


class StationarySolver:
    """Precomputed stationary machinery shared across agents.

    Holds Phi, G = B R^-1 B', and a cached factorization of
    A' - 2 Phi G so that per-agent H solves are a single back-substitution.
    """

    def __init__(
        self,
        sys: SystemMatrices,
        B_ctrl: ControlMatrix,
        pen: MfgPenalties,
        care_cfg: CareConfig | None = None,
    ):
        self.sys = sys
        self.B_ctrl = B_ctrl
        self.pen = pen
        self.Phi = solve_care(sys.A, B_ctrl.B, pen.Q, pen.R, care_cfg)
        self.G = B_ctrl.B @ np.linalg.solve(pen.R, B_ctrl.B.T)
        self.Z_matrix = sys.A.T - 2.0 * self.Phi @ self.G
        # Cache the explicit inverse: per-agent H solves become plain
        # matrix-vector products, which stay thread-safe and bit-identical
        # under any worker partitioning (LAPACK back-substitution is not
        # safe to share across threads on every BLAS build).
        self.Z_inv = LinearSolver(self.Z_matrix).solve(np.eye(sys.A.shape[0]))
        self.gain = np.linalg.solve(pen.R, B_ctrl.B.T)  # R^-1 B'
        self.q_diag = np.diag(pen.Q)
        self.closed_loop = sys.A - self.G @ self.Phi.T

    def solve_h(self, rho, C) -> np.ndarray:
        return self.Z_inv @ (self.q_diag * rho - self.Phi.T @ C)


def solve_value_stationary(
    sys: SystemMatrices,
    B_ctrl: ControlMatrix,
    pen: MfgPenalties,
    rho_k,
    care_cfg: CareConfig | None = None,
) -> ValueCoeffs:
    """Stationary (T -> infinity) value-function coefficients for a frozen
    neighbor aggregate. chi has no stationary value unless its drift
    vanishes; the drift is reported instead."""
    rho_k = as_vector(rho_k, "rho_k")
    solver = StationarySolver(sys, B_ctrl, pen, care_cfg)
    H = solver.solve_h(rho_k, sys.C)
    rate = -(H @ solver.G @ H + H @ sys.C + 0.5 * rho_k @ (solver.q_diag * rho_k))
    chi = 0.0 if abs(rate) <= 1e-10 else None
    return ValueCoeffs(
        Phi=solver.Phi, H=H, chi=chi, stationary=True, chi_rate=float(rate)
    )


def optimal_control(
    coeffs: ValueCoeffs, B_ctrl: ControlMatrix, pen: MfgPenalties, x
) -> np.ndarray:
    """v* = -R^-1 B'(Phi' x + H)."""
    xv = np.asarray(getattr(x, "vec", x), dtype=float)
    return -np.linalg.solve(pen.R, B_ctrl.B.T @ (coeffs.Phi.T @ xv + coeffs.H))


def mean_state_step(
    sys: SystemMatrices,
    B_ctrl: ControlMatrix,
    pen: MfgPenalties,
    coeffs: ValueCoeffs,
    mbar,
    dt: float,
) -> np.ndarray:
    """Euler step of dm/dt = [A - B R^-1 B' Phi] m - B R^-1 B' H + C."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    mbar = as_vector(mbar, "mbar")
    G = B_ctrl.B @ np.linalg.solve(pen.R, B_ctrl.B.T)
    drift = (sys.A - G @ coeffs.Phi) @ mbar - G @ coeffs.H + sys.C
    return mbar + dt * drift


def hamiltonian(
    x, p_costate, rho_k, v, sys: SystemMatrices, pen: MfgPenalties, B_ctrl: ControlMatrix
) -> float:
    """Pre-minimization Hamiltonian value at a given control:
    v'Rv/2 + (rho - x)'Q(rho - x)/2 + p'(Ax + Bv + C)."""
    xv = np.asarray(getattr(x, "vec", x), dtype=float)
    p = as_vector(p_costate, "p_costate")
    rho = as_vector(rho_k, "rho_k")
    v = as_vector(v, "v")
    dev = rho - xv
    return float(
        0.5 * v @ pen.R @ v
        + 0.5 * dev @ pen.Q @ dev
        + p @ (sys.A @ xv + B_ctrl.B @ v + sys.C)
    )
