"""Dense linear algebra primitives: solves, Riccati equations, spectra.

Everything here is a pure function of its inputs; arrays are treated as
immutable and outputs are freshly allocated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatchError,
    EigenFailureError,
    NoStabilizingSolutionError,
    NotConvergedError,
    SingularMatrixError,
    StepSizeTooLargeError,
)

#: relative pivot threshold distinguishing genuine singularity from noise
PIVOT_RTOL = 1e-12

CARE_FORM_STANDARD = "standard-symmetric"
CARE_FORM_PAPER = "paper-literal"


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    v = np.asarray(a, dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True)
class CareConfig:
    """Options for the continuous algebraic Riccati solver."""

    method: str = "hamiltonian-eigen"  # or "newton-kleinman"
    max_iter: int = 100
    residual_tol: float = 1e-8
    form: str = CARE_FORM_STANDARD

    def __post_init__(self):
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.method not in ("hamiltonian-eigen", "newton-kleinman"):
            raise ValueError(f"unknown CARE method {self.method!r}")
        if self.form not in (CARE_FORM_STANDARD, CARE_FORM_PAPER):
            raise ValueError(f"unknown CARE form {self.form!r}")


class LinearSolver:
    """LU factorization reusable across right-hand sides.

    Raises :class:`SingularMatrixError` when a pivot falls below
    ``PIVOT_RTOL`` relative to the largest row magnitude of ``M``.
    """

    def __init__(self, M, pivot_rtol: float = PIVOT_RTOL):
        M = as_matrix(M, "M")
        if M.shape[0] != M.shape[1]:
            raise DimensionMismatchError(f"M must be square, got {M.shape}")
        self.M = M
        scale = np.abs(M).max(initial=0.0)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
        pivots = np.abs(np.diag(lu))
        if scale == 0.0 or pivots.min(initial=np.inf) <= pivot_rtol * scale:
            raise SingularMatrixError(
                "pivot below threshold; matrix is numerically singular"
            )
        self._lu = (lu, piv)

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.M.shape[0]:
            raise DimensionMismatchError(
                f"rhs length {b.shape[0]} != matrix dimension {self.M.shape[0]}"
            )
        return scipy.linalg.lu_solve(self._lu, b, check_finite=False)


def solve_linear(M, b) -> np.ndarray:
    """Solve ``M y = b`` for square ``M`` by partial-pivot LU."""
    return LinearSolver(M).solve(as_vector(b, "b"))


def care_residual(A, B, Q, R, Phi, form: str = CARE_FORM_STANDARD) -> float:
    """Frobenius norm of the Riccati residual in the requested form."""
    A, B, Q, R, Phi = map(np.asarray, (A, B, Q, R, Phi))
    G = B @ np.linalg.solve(R, B.T)
    if form == CARE_FORM_STANDARD:
        res = A.T @ Phi + Phi @ A - Phi @ G @ Phi + Q
    elif form == CARE_FORM_PAPER:
        res = A.T @ Phi - Phi.T @ G @ Phi + Q
    else:
        raise ValueError(f"unknown CARE form {form!r}")
    return float(np.linalg.norm(res, "fro"))


def _check_symmetric(M, name, tol=1e-10):
    if not np.allclose(M, M.T, atol=tol * (1.0 + np.abs(M).max(initial=0.0))):
        raise ValueError(f"{name} must be symmetric")


def _care_hamiltonian(A, G, Q, residual_tol):
    """Stabilizing CARE solution via the stable invariant subspace of the
    2n Hamiltonian matrix, extracted by ordered real Schur decomposition."""
    n = A.shape[0]
    ham = np.block([[A, -G], [-Q, -A.T]])
    try:
        T, Z, sdim = scipy.linalg.schur(ham, output="real", sort="lhp")
    except Exception as exc:  # pragma: no cover - LAPACK failure path
        raise EigenFailureError(f"Schur decomposition failed: {exc}") from exc
    eigs = np.linalg.eigvals(ham)
    scale = max(1.0, np.abs(eigs).max(initial=0.0))
    if np.abs(eigs.real).min(initial=np.inf) <= 1e-9 * scale:
        raise NoStabilizingSolutionError(
            "Hamiltonian matrix has eigenvalues on the imaginary axis"
        )
    if sdim != n:
        raise NoStabilizingSolutionError(
            f"stable invariant subspace has dimension {sdim}, expected {n}"
        )
    U11 = Z[:n, :n]
    U21 = Z[n:, :n]
    try:
        Phi = np.linalg.solve(U11.T, U21.T).T
    except np.linalg.LinAlgError as exc:
        raise NoStabilizingSolutionError(
            "stable subspace is not a graph over the state space"
        ) from exc
    return 0.5 * (Phi + Phi.T)


def _care_newton(A, B, G, Q, R, cfg):
    """Newton-Kleinman iteration; needs a Hurwitz starting loop, which the
    zero gain provides whenever A itself is Hurwitz."""
    hurwitz, _ = is_hurwitz(A)
    if not hurwitz:
        raise NoStabilizingSolutionError(
            "newton-kleinman needs a stabilizing initial gain; A is not Hurwitz"
        )
    K = np.zeros((B.shape[1], A.shape[0]))
    Phi = None
    for _ in range(cfg.max_iter):
        Acl = A - B @ K
        Phi = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        Phi = 0.5 * (Phi + Phi.T)
        K = np.linalg.solve(R, B.T @ Phi)
        if care_residual(A, B, Q, R, Phi) <= cfg.residual_tol:
            return Phi
    raise NotConvergedError(
        f"newton-kleinman did not reach tolerance in {cfg.max_iter} iterations"
    )


def solve_care(A, B, Q, R, cfg: CareConfig | None = None) -> np.ndarray:
    """Stabilizing solution of A'P + PA - P B R^-1 B' P + Q = 0.

    In ``paper-literal`` form the same stabilizing solution is returned but
    only its literal-form residual is checked for finiteness, not enforced;
    use :func:`care_residual` to inspect either residual.
    """
    cfg = cfg or CareConfig()
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n) or B.shape[0] != n:
        raise DimensionMismatchError("incompatible CARE dimensions")
    _check_symmetric(Q, "Q")
    _check_symmetric(R, "R")
    if np.linalg.eigvalsh(R).min() <= 0:
        raise ValueError("R must be positive definite")
    if np.linalg.eigvalsh(Q).min() < -1e-10 * max(1.0, np.abs(Q).max()):
        raise ValueError("Q must be positive semidefinite")

    G = B @ np.linalg.solve(R, B.T)
    if cfg.method == "hamiltonian-eigen":
        Phi = _care_hamiltonian(A, G, Q, cfg.residual_tol)
    else:
        Phi = _care_newton(A, B, G, Q, R, cfg)

    if cfg.form == CARE_FORM_STANDARD:
        res = care_residual(A, B, Q, R, Phi, CARE_FORM_STANDARD)
        if res > cfg.residual_tol:
            raise NotConvergedError(f"CARE residual {res:.3e} above tolerance")
        hurwitz, absc = is_hurwitz(A - G @ Phi)
        if not hurwitz:
            raise NoStabilizingSolutionError(
                f"closed loop not Hurwitz (abscissa {absc:.3e})"
            )
    return Phi


@dataclass(frozen=True)
class RiccatiPath:
    """Backward Riccati trajectories on a uniform grid over [0, T]."""

    times: np.ndarray  # (steps+1,)
    Phi: np.ndarray  # (steps+1, n, n)
    H: np.ndarray  # (steps+1, n)
    chi: np.ndarray  # (steps+1,)


def integrate_riccati_backward(
    A,
    B,
    Q,
    R,
    S,
    rho_path,
    C,
    T: float,
    dt: float,
    form: str = CARE_FORM_STANDARD,
    divergence_bound: float = 1e12,
) -> RiccatiPath:
    """Integrate the value-function coefficient ODEs backward from t = T.

    Terminal data Phi(T) = S, H(T) = -S rho(T), chi(T) = rho(T)'S rho(T)/2
    are imposed exactly; the reversed-time system is stepped with classical
    RK4. ``rho_path`` is either a constant vector or an array indexed by the
    grid (steps+1, n); midpoints are linearly interpolated.
    """
    if not (T > 0 and 0 < dt <= T):
        raise ValueError("need T > 0 and 0 < dt <= T")
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    S = as_matrix(S, "S")
    C = as_vector(C, "C")
    n = A.shape[0]
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * T:
        raise ValueError("dt must divide T")
    times = np.linspace(0.0, T, steps + 1)

    rho_arr = np.asarray(rho_path, dtype=float)
    if rho_arr.ndim == 1:
        rho_arr = np.broadcast_to(rho_arr, (steps + 1, n))
    if rho_arr.shape != (steps + 1, n):
        raise DimensionMismatchError(
            f"rho_path must have shape ({steps + 1}, {n}), got {rho_arr.shape}"
        )

    def rho_at(t):
        # linear interpolation on the grid
        s = np.clip(t / dt, 0.0, steps)
        i = int(np.floor(s))
        if i >= steps:
            return rho_arr[steps]
        w = s - i
        return (1.0 - w) * rho_arr[i] + w * rho_arr[i + 1]

    G = B @ np.linalg.solve(R, B.T)

    def derivs(t, Phi, H, chi):
        # reversed-time (s = T - t) derivatives
        if form == CARE_FORM_STANDARD:
            dPhi = A.T @ Phi + Phi @ A - Phi @ G @ Phi + Q
        elif form == CARE_FORM_PAPER:
            dPhi = A.T @ Phi - Phi.T @ G @ Phi + Q
        else:
            raise ValueError(f"unknown form {form!r}")
        rho = rho_at(t)
        dH = A.T @ H - 2.0 * Phi @ G @ H + Phi.T @ C - Q @ rho
        dchi = H @ G @ H + H @ C + 0.5 * rho @ Q @ rho
        return dPhi, dH, dchi

    Phi_out = np.empty((steps + 1, n, n))
    H_out = np.empty((steps + 1, n))
    chi_out = np.empty(steps + 1)
    rho_T = rho_arr[steps]
    Phi = S.copy()
    H = -(S @ rho_T)
    chi = 0.5 * float(rho_T @ S @ rho_T)
    Phi_out[steps], H_out[steps], chi_out[steps] = Phi, H, chi

    for i in range(steps, 0, -1):
        t = times[i]
        k1 = derivs(t, Phi, H, chi)
        k2 = derivs(t - 0.5 * dt, Phi + 0.5 * dt * k1[0], H + 0.5 * dt * k1[1], chi + 0.5 * dt * k1[2])
        k3 = derivs(t - 0.5 * dt, Phi + 0.5 * dt * k2[0], H + 0.5 * dt * k2[1], chi + 0.5 * dt * k2[2])
        k4 = derivs(t - dt, Phi + dt * k3[0], H + dt * k3[1], chi + dt * k3[2])
        Phi = Phi + (dt / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        H = H + (dt / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        chi = chi + (dt / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if np.abs(Phi).max() > divergence_bound:
            raise StepSizeTooLargeError(
                f"Phi diverged beyond {divergence_bound:g} at t={times[i - 1]:g}"
            )
        Phi_out[i - 1], H_out[i - 1], chi_out[i - 1] = Phi, H, chi

    return RiccatiPath(times=times, Phi=Phi_out, H=H_out, chi=chi_out)


def is_hurwitz(M, tol_margin: float = 0.0) -> tuple[bool, float]:
    """Whether every eigenvalue of M has real part < -tol_margin.

    Returns (verdict, spectral abscissa).
    """
    M = as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatchError("M must be square")
    try:
        eigs = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise EigenFailureError(str(exc)) from exc
    abscissa = float(eigs.real.max())
    return abscissa < -tol_margin, abscissa
