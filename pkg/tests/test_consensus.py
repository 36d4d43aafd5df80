import numpy as np
import pytest
import scipy.linalg

from capflow.consensus import (
    FORM_FULL_STACKED,
    FORM_ISOLATED_C,
    ConsensusSystem,
    build_consensus_system,
    consensus_equilibrium,
    consensus_laplacian,
    verify_convergence,
)
from capflow.errors import InvalidParamsError
from capflow.macro_net import MacroTopology, complete_topology, ring_topology
from capflow.mfg import ValueCoeffs


@pytest.fixture(scope="module")
def coeffs(stationary, layout):
    return ValueCoeffs(Phi=stationary.Phi, H=np.zeros(layout.dim), chi=None, stationary=True)


def full_system(topo, system, control, penalties, coeffs):
    return build_consensus_system(topo, system, control, penalties, coeffs, FORM_FULL_STACKED)


class TestBuild:
    def test_minimum_population(self, system, control, penalties, coeffs):
        single = MacroTopology.__new__(MacroTopology)  # bypass validation for p=1
        object.__setattr__(single, "adjacency", np.zeros((1, 1), dtype=bool))
        with pytest.raises(InvalidParamsError):
            build_consensus_system(single, system, control, penalties, coeffs)

    def test_full_stacked_blocks(self, system, control, penalties, stationary, coeffs):
        cs = full_system(complete_topology(2), system, control, penalties, coeffs)
        G = stationary.G
        assert np.allclose(cs.diag_block, system.A - G @ stationary.Phi.T)
        # coupling enters through the neighbor average with a minus sign
        Z = np.linalg.inv(stationary.Z_matrix)
        assert np.allclose(cs.coupling_block, -G @ Z @ penalties.Q)
        assert cs.dim == 2 * 33

    def test_isolated_c_needs_mu(self, system, control, penalties, coeffs):
        with pytest.raises(ValueError):
            build_consensus_system(
                ring_topology(4), system, control, penalties, coeffs, FORM_ISOLATED_C
            )

    def test_isolated_literal_needs_rho(self, system, control, penalties, coeffs):
        with pytest.raises(ValueError):
            build_consensus_system(
                ring_topology(4), system, control, penalties, coeffs,
                FORM_ISOLATED_C, mu_freeze=np.zeros(9), fold_rho=False,
            )

    def test_laplacian_kernel_contains_consensus(
        self, system, control, penalties, coeffs
    ):
        cs = build_consensus_system(
            ring_topology(6), system, control, penalties, coeffs,
            FORM_ISOLATED_C, mu_freeze=np.ones(9),
        )
        L = consensus_laplacian(cs)
        w = np.arange(9.0)
        assert np.abs(L @ np.tile(w, 6)).max() <= 1e-12

    def test_laplacian_off_diagonal_scaling(self, system, control, penalties, coeffs):
        # row k's off-diagonal block is -(1/|N(k)|) x the diagonal block
        cs = build_consensus_system(
            ring_topology(5), system, control, penalties, coeffs,
            FORM_ISOLATED_C, mu_freeze=np.zeros(9),
        )
        L = consensus_laplacian(cs)
        blk = cs.laplacian_block
        assert np.allclose(L[:9, :9], blk)
        assert np.allclose(L[:9, 9:18], -0.5 * blk)  # ring degree 2
        assert np.abs(L[:9, 18:27]).max() == 0.0  # not a neighbor


class TestEquilibrium:
    def test_zero_offset(self):
        cs = ConsensusSystem(
            form=FORM_FULL_STACKED, p=3, block_dim=2,
            diag_block=-np.eye(2), coupling_block=np.zeros((2, 2)),
            b_block=np.zeros(2), P=np.eye(3),
        )
        assert np.abs(consensus_equilibrium(cs)).max() == 0.0

    def test_diagonal_solve(self):
        # damping only, offset of ones: equilibrium at ones
        cs = ConsensusSystem(
            form=FORM_ISOLATED_C, p=2, block_dim=3,
            diag_block=-np.eye(3), coupling_block=np.zeros((3, 3)),
            b_block=np.ones(3), P=np.array([[0.0, 1.0], [1.0, 0.0]]),
        )
        assert np.allclose(consensus_equilibrium(cs), 1.0)

    @pytest.mark.parametrize("p", [2, 5, 10])
    def test_ode_converges_to_equilibrium(
        self, p, system, control, penalties, coeffs
    ):
        topo = complete_topology(p) if p == 2 else ring_topology(p)
        cs = full_system(topo, system, control, penalties, coeffs)
        report = verify_convergence(cs)
        assert report.hurwitz
        eq = consensus_equilibrium(cs).reshape(-1)
        rng = np.random.default_rng(p)
        x0 = rng.normal(0, 30, cs.dim)
        # exact flow: x(t) = eq + expm(M t)(x0 - eq); after many time
        # constants the transient is gone
        T = 30.0 * report.time_constant()
        x = eq + scipy.linalg.expm(cs.matrix() * T) @ (x0 - eq)
        assert np.abs(x - eq).max() <= 1e-3 * (1.0 + np.abs(eq).max())

    def test_equilibrium_residual(self, system, control, penalties, coeffs):
        cs = full_system(ring_topology(6), system, control, penalties, coeffs)
        eq = consensus_equilibrium(cs).reshape(-1)
        res = cs.matrix() @ eq + cs.offset()
        assert np.abs(res).max() <= 1e-8


class TestConvergenceReport:
    def test_negative_identity(self):
        cs = ConsensusSystem(
            form=FORM_FULL_STACKED, p=2, block_dim=2,
            diag_block=-np.eye(2), coupling_block=np.zeros((2, 2)),
            b_block=np.zeros(2), P=np.array([[0.0, 1.0], [1.0, 0.0]]),
        )
        report = verify_convergence(cs)
        assert report.hurwitz
        assert report.spectral_abscissa == pytest.approx(-1.0)
        assert report.time_constant() == pytest.approx(1.0)

    def test_zero_row_not_hurwitz(self):
        cs = ConsensusSystem(
            form=FORM_FULL_STACKED, p=2, block_dim=2,
            diag_block=np.array([[0.0, 0.0], [1.0, -1.0]]),
            coupling_block=np.zeros((2, 2)),
            b_block=np.zeros(2), P=np.array([[0.0, 1.0], [1.0, 0.0]]),
        )
        assert not verify_convergence(cs).hurwitz

    def test_kronecker_spectrum_matches_dense(self, system, control, penalties, coeffs):
        cs = full_system(ring_topology(3), system, control, penalties, coeffs)
        report = verify_convergence(cs)
        dense = np.linalg.eigvals(cs.matrix()).real.max()
        assert report.spectral_abscissa == pytest.approx(dense, abs=1e-8)

    def test_default_instance_hurwitz(self, system, control, penalties, coeffs):
        cs = full_system(ring_topology(10), system, control, penalties, coeffs)
        assert verify_convergence(cs).hurwitz


class TestFormsAgree:
    def test_isolated_c_tracks_full_stacked(self, system, control, penalties, coeffs, layout):
        # fixed point check: freeze mu at the full-stacked equilibrium's
        # mu block, then compare capacity equilibria. The c-isolation drops
        # the control's dependence on the flow and price blocks, which for
        # scalar control shifts every capacity equally: the difference is a
        # constant vector, and its size is the documented model gap.
        topo = ring_topology(10)
        cs_full = full_system(topo, system, control, penalties, coeffs)
        eq_full = consensus_equilibrium(cs_full)
        mu_star = eq_full[0, layout.mu]
        cs_iso = build_consensus_system(
            topo, system, control, penalties, coeffs,
            FORM_ISOLATED_C, mu_freeze=mu_star,
        )
        eq_iso = consensus_equilibrium(cs_iso)
        diff = eq_full[0, layout.c] - eq_iso[0]
        assert np.abs(diff - diff.mean()).max() <= 1e-8  # pure uniform shift
        assert np.abs(diff).max() <= 10.0
