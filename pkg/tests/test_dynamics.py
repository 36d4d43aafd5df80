import numpy as np
import pytest

from capflow.dynamics import (
    BlockLayout,
    StackedState,
    assemble_system,
    pd_run,
    pd_step,
)
from capflow.errors import DimensionMismatchError
from capflow.micro import CostParams, build_micro_network, solve_deterministic_qp

FIXED_DEMAND = np.array([0.0, 0.0, 23.0, 7.0, 0.0, 0.0])


class TestBlockLayout:
    def test_dimensions(self):
        lay = BlockLayout(m=9, n=6)
        assert lay.dim == 33
        assert (lay.u, lay.c) == (slice(0, 9), slice(9, 18))
        assert (lay.lam, lay.mu) == (slice(18, 24), slice(24, 33))

    def test_nonneg_mask_spares_lambda(self):
        lay = BlockLayout(m=2, n=3)
        mask = lay.nonneg_mask()
        assert mask.sum() == 3 * 2
        assert not mask[lay.lam].any()


class TestStackedState:
    def test_round_trip_blocks(self):
        x = StackedState.from_blocks([1.0, 2.0], [3.0, 4.0], [5.0], [6.0, 7.0])
        assert np.array_equal(x.u, [1.0, 2.0])
        assert np.array_equal(x.c, [3.0, 4.0])
        assert np.array_equal(x.lam, [5.0])
        assert np.array_equal(x.mu, [6.0, 7.0])

    def test_block_length_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            StackedState.from_blocks([1.0], [1.0, 2.0], [0.0], [1.0])

    def test_zeros(self):
        lay = BlockLayout(m=3, n=2)
        assert np.abs(StackedState.zeros(lay).vec).max() == 0.0


class TestAssembleSystem:
    def test_default_instance_shape(self, system):
        assert system.A.shape == (33, 33)
        assert system.C.shape == (33,)

    def test_block_pattern(self, net, costs, system):
        lay = system.layout
        A, B = system.A, net.incidence
        m = net.m
        assert np.array_equal(A[lay.u, lay.u], -np.diag(costs.q2))
        assert np.array_equal(A[lay.u, lay.c], np.zeros((m, m)))
        assert np.array_equal(A[lay.u, lay.lam], -B.T)
        assert np.array_equal(A[lay.u, lay.mu], -np.eye(m))
        assert np.array_equal(A[lay.c, lay.c], -np.diag(costs.q1))
        assert np.array_equal(A[lay.c, lay.mu], np.eye(m))
        assert np.array_equal(A[lay.lam, lay.u], B)
        assert np.array_equal(A[lay.lam, lay.lam], np.zeros((net.n, net.n)))
        assert np.array_equal(A[lay.mu, lay.u], np.eye(m))
        assert np.array_equal(A[lay.mu, lay.c], -np.eye(m))
        assert np.array_equal(A[lay.mu, lay.mu], np.zeros((m, m)))

    def test_offset_vector(self, net, costs):
        sys = assemble_system(net, costs, FIXED_DEMAND)
        lay = sys.layout
        assert np.array_equal(sys.C[lay.u], -costs.f2)
        assert np.array_equal(sys.C[lay.c], -costs.f1)
        assert np.array_equal(sys.C[lay.lam], -FIXED_DEMAND)
        assert np.abs(sys.C[lay.mu]).max() == 0.0

    def test_damping_plus_skew_structure(self, system):
        # A + diag(Q2, Q1, 0, 0) is skew-symmetric: the saddle flow is a
        # damped Hamiltonian system, which is what makes it contract
        lay = system.layout
        D = np.zeros_like(system.A)
        D[lay.u, lay.u] = system.A[lay.u, lay.u]
        D[lay.c, lay.c] = system.A[lay.c, lay.c]
        S = system.A - D
        assert np.abs(S + S.T).max() == 0.0

    def test_demand_refresh_touches_only_lambda_block(self, net, costs):
        sys = assemble_system(net, costs, FIXED_DEMAND)
        w2 = np.array([0.0, 0.0, 10.0, 2.0, 0.0, 0.0])
        sys2 = sys.with_demand(w2)
        lay = sys.layout
        assert np.array_equal(sys2.C[lay.lam], -w2)
        mask = np.ones(33, dtype=bool)
        mask[lay.lam] = False
        assert np.array_equal(sys2.C[mask], sys.C[mask])
        assert sys2.A is sys.A

    def test_dimension_checks(self, net, costs):
        with pytest.raises(DimensionMismatchError):
            assemble_system(net, costs, np.zeros(5))


class TestPdStep:
    def test_origin_fixed_without_forcing(self):
        two = build_micro_network([[1.0], [-1.0]], sink_nodes=(0,))
        costs = CostParams(q1=[1.0], q2=[1.0], f1=[0.0], f2=[0.0])
        sys = assemble_system(two, costs, np.zeros(2))
        x = StackedState.zeros(sys.layout)
        y = pd_step(sys, x, 0.1)
        assert np.abs(y.vec).max() == 0.0

    def test_clamp_holds_flow_while_price_moves(self):
        # from the origin with positive linear costs, the flow block is
        # pushed negative and clamped; the price block integrates -w freely
        two = build_micro_network([[1.0], [-1.0]], sink_nodes=(0,))
        costs = CostParams(q1=[1.0], q2=[1.0], f1=[1.0], f2=[1.0])
        w = np.array([3.0, -3.0])
        sys = assemble_system(two, costs, w)
        y = pd_step(sys, StackedState.zeros(sys.layout), 0.1)
        assert np.array_equal(y.u, [0.0])
        assert np.array_equal(y.c, [0.0])
        assert np.allclose(y.lam, -0.1 * w)

    def test_unprojected_step_is_affine(self, system):
        rng = np.random.default_rng(2)
        x = StackedState(vec=rng.normal(size=33), layout=system.layout)
        y = pd_step(system, x, 0.05, projected=False)
        assert np.allclose(y.vec, x.vec + 0.05 * (system.A @ x.vec + system.C))

    def test_oracle_point_is_fixed(self, net, costs):
        sol = solve_deterministic_qp(net, costs, FIXED_DEMAND)
        sys = assemble_system(net, costs, FIXED_DEMAND)
        x = StackedState.from_blocks(sol.u, sol.c, sol.lam, sol.mu)
        y = pd_step(sys, x, 1e-3)
        assert np.abs(y.vec - x.vec).max() <= 1e-12


class TestPdRun:
    def test_starts_converged_at_oracle_point(self, net, costs):
        sol = solve_deterministic_qp(net, costs, FIXED_DEMAND)
        sys = assemble_system(net, costs, FIXED_DEMAND)
        x0 = StackedState.from_blocks(sol.u, sol.c, sol.lam, sol.mu)
        run = pd_run(sys, net, costs, FIXED_DEMAND, x0)
        assert run.converged
        assert run.steps_taken == 1
        assert run.kkt.max_abs() <= 1e-8

    def test_zero_demand_converges_to_origin(self, net, costs):
        sys = assemble_system(net, costs, np.zeros(6))
        rng = np.random.default_rng(4)
        x0 = StackedState(vec=np.abs(rng.normal(size=33)), layout=sys.layout)
        run = pd_run(sys, net, costs, np.zeros(6), x0, dt=1e-2, stop_tol=1e-8)
        assert run.converged
        assert np.abs(run.state.u).max() <= 1e-6
        assert np.abs(run.state.c).max() <= 1e-6

    def test_step_budget_returns_diagnostics(self, net, costs):
        sys = assemble_system(net, costs, FIXED_DEMAND)
        run = pd_run(
            sys, net, costs, FIXED_DEMAND, StackedState.zeros(sys.layout),
            dt=1e-4, max_steps=50, stop_tol=1e-12,
        )
        assert not run.converged
        assert run.steps_taken == 50
        assert np.isfinite(run.drift_sup)

    def test_trajectory_recorded(self, net, costs):
        sys = assemble_system(net, costs, FIXED_DEMAND)
        run = pd_run(
            sys, net, costs, FIXED_DEMAND, StackedState.zeros(sys.layout),
            dt=1e-3, max_steps=1000, stop_tol=0.0, record_every=100,
        )
        assert run.trajectory.shape[0] == len(run.record_times)
        assert run.record_times[0] == 0.0
        assert run.trajectory.shape[1] == 33

    def test_divergence_guard(self, net, costs):
        sys = assemble_system(net, costs, FIXED_DEMAND)
        with pytest.raises(FloatingPointError):
            pd_run(
                sys, net, costs, FIXED_DEMAND, StackedState.zeros(sys.layout),
                dt=5.0, max_steps=10000, stop_tol=0.0,
            )
