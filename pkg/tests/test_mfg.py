import numpy as np
import pytest

from capflow.dynamics import BlockLayout, SystemMatrices
from capflow.linalg import integrate_riccati_backward
from capflow.mfg import (
    CONTROL_PER_EDGE_ON_C,
    MfgPenalties,
    StationarySolver,
    ValueCoeffs,
    build_control_matrix,
    build_penalties,
    hamiltonian,
    mean_state_step,
    optimal_control,
    solve_value_stationary,
)


def scalar_system(a=0.0, c=0.0):
    """One-dimensional affine plant wrapped in the SystemMatrices container."""
    lay = BlockLayout(m=1, n=1)  # layout unused by the scalar algebra below
    return SystemMatrices(A=np.array([[a]]), C=np.array([c]), layout=lay)


class TestPenalties:
    def test_blocks_on_capacity_only(self, layout, penalties):
        qd = np.diag(penalties.Q)
        assert np.all(qd[layout.c] == 1.0)
        off = np.ones(layout.dim, dtype=bool)
        off[layout.c] = False
        assert np.abs(qd[off]).max() == 0.0
        assert penalties.R.shape == (1, 1)

    def test_per_edge_mode_widens_R(self, layout):
        pen = build_penalties(layout, 2.0, 3.0, mode=CONTROL_PER_EDGE_ON_C)
        assert pen.R.shape == (layout.m, layout.m)
        assert np.all(np.diag(pen.R) == 3.0)

    def test_invalid_weights(self, layout):
        with pytest.raises(ValueError):
            build_penalties(layout, -1.0, 1.0)
        with pytest.raises(ValueError):
            build_penalties(layout, 1.0, 0.0)

    def test_nondiagonal_rejected(self):
        with pytest.raises(ValueError):
            MfgPenalties(Q=np.ones((2, 2)), R=np.eye(1), S=np.zeros((2, 2)))


class TestControlMatrix:
    def test_scalar_mode_column(self, layout, control):
        assert control.B.shape == (layout.dim, 1)
        assert np.all(control.B[layout.c, 0] == 1.0)
        assert control.B.sum() == layout.m

    def test_per_edge_mode(self, layout):
        Bc = build_control_matrix(layout, CONTROL_PER_EDGE_ON_C)
        assert Bc.B.shape == (layout.dim, layout.m)
        assert np.array_equal(Bc.B[layout.c, :], np.eye(layout.m))

    def test_unknown_mode(self, layout):
        with pytest.raises(ValueError):
            build_control_matrix(layout, "full")


class TestStationaryValue:
    def test_scalar_affine_coefficient(self):
        # a=0, b=1, q=1, r=1 gives phi=1 and Z = a - 2 phi = -2; with
        # q rho = 5 and no offset the affine coefficient is -2.5
        sys = scalar_system()
        coeffs = solve_value_stationary(
            sys,
            _raw_control(np.array([[1.0]])),
            MfgPenalties(Q=np.eye(1), R=np.eye(1), S=np.zeros((1, 1))),
            np.array([5.0]),
        )
        assert coeffs.Phi[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert coeffs.H[0] == pytest.approx(-2.5, abs=1e-12)

    def test_h_solve_residual(self, system, stationary, layout):
        rho = np.zeros(layout.dim)
        rho[layout.c] = 40.0
        H = stationary.solve_h(rho, system.C)
        res = stationary.Z_matrix @ H - (stationary.q_diag * rho - stationary.Phi.T @ system.C)
        assert np.abs(res).max() <= 1e-10

    def test_chi_drift_reported(self, system, control, penalties, layout):
        rho = np.zeros(layout.dim)
        rho[layout.c] = 40.0
        coeffs = solve_value_stationary(system, control, penalties, rho)
        assert coeffs.chi is None  # no stationary value for the scalar term
        assert np.isfinite(coeffs.chi_rate)

    def test_finite_horizon_consistency(self, system, control, penalties, stationary, layout):
        # long-horizon backward integration lands on the stationary
        # coefficients for a frozen aggregate
        rho = np.zeros(layout.dim)
        rho[layout.c] = 30.0
        coeffs = solve_value_stationary(system, control, penalties, rho)
        S = np.diag(np.diag(penalties.S))
        path = integrate_riccati_backward(
            system.A, control.B, penalties.Q, penalties.R, S, rho, system.C,
            T=200.0, dt=0.01,
        )
        assert np.linalg.norm(path.Phi[0] - coeffs.Phi) <= 1e-4
        assert np.abs(path.H[0] - coeffs.H).max() <= 1e-4


class TestOptimalControl:
    def test_stationarity_identity(self, system, control, penalties, stationary, layout):
        rng = np.random.default_rng(9)
        rho = rng.normal(0, 10, layout.dim)
        H = stationary.solve_h(rho, system.C)
        coeffs = ValueCoeffs(Phi=stationary.Phi, H=H, chi=None, stationary=True)
        for _ in range(50):
            x = rng.normal(0, 50, layout.dim)
            v = optimal_control(coeffs, control, penalties, x)
            res = penalties.R @ v + control.B.T @ (stationary.Phi.T @ x + H)
            assert np.abs(res).max() <= 1e-12

    def test_invariant_to_rho_outside_capacity_block(
        self, system, control, penalties, stationary, layout
    ):
        rng = np.random.default_rng(10)
        rho = rng.normal(0, 10, layout.dim)
        x = rng.normal(0, 10, layout.dim)
        perturbed = rho.copy()
        mask = np.ones(layout.dim, dtype=bool)
        mask[layout.c] = False
        perturbed[mask] += rng.normal(0, 100, mask.sum())
        v1 = optimal_control(
            ValueCoeffs(stationary.Phi, stationary.solve_h(rho, system.C), None, True),
            control, penalties, x,
        )
        v2 = optimal_control(
            ValueCoeffs(stationary.Phi, stationary.solve_h(perturbed, system.C), None, True),
            control, penalties, x,
        )
        assert np.abs(v1 - v2).max() <= 1e-9

    def test_hamiltonian_minimizer(self, system, control, penalties, stationary, layout):
        rng = np.random.default_rng(12)
        rho = rng.normal(0, 10, layout.dim)
        H = stationary.solve_h(rho, system.C)
        coeffs = ValueCoeffs(Phi=stationary.Phi, H=H, chi=None, stationary=True)
        for _ in range(10):
            x = rng.normal(0, 50, layout.dim)
            p = stationary.Phi.T @ x + H
            v = optimal_control(coeffs, control, penalties, x)
            base = hamiltonian(x, p, rho, v, system, penalties, control)
            for j in range(v.shape[0]):
                for delta in (1e-3, -1e-3, 1e-1, -1e-1):
                    vv = v.copy()
                    vv[j] += delta
                    assert hamiltonian(x, p, rho, vv, system, penalties, control) >= base - 1e-12


class TestMeanState:
    def test_equilibrium_is_fixed_point(self, system, control, penalties, stationary, layout):
        rho = np.zeros(layout.dim)
        rho[layout.c] = 20.0
        H = stationary.solve_h(rho, system.C)
        coeffs = ValueCoeffs(Phi=stationary.Phi, H=H, chi=None, stationary=True)
        G = stationary.G
        m_star = np.linalg.solve(system.A - G @ stationary.Phi, G @ H - system.C)
        stepped = mean_state_step(system, control, penalties, coeffs, m_star, 0.1)
        assert np.abs(stepped - m_star).max() <= 1e-9

    def test_bad_dt(self, system, control, penalties, stationary, layout):
        coeffs = ValueCoeffs(stationary.Phi, np.zeros(layout.dim), None, True)
        with pytest.raises(ValueError):
            mean_state_step(system, control, penalties, coeffs, np.zeros(layout.dim), 0.0)


def _raw_control(B):
    from capflow.mfg import ControlMatrix

    return ControlMatrix(B=B, mode="scalar-on-c")
