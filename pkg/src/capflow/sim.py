"""Population simulator: stochastic demand, per-agent stationary control,
synchronous neighbor averaging, trajectory logging, spread metrics.

Determinism: every random draw comes from a counter-based Philox stream
keyed by (seed, agent-sample index, step index), so results are bit-equal
regardless of how agents are partitioned across workers.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass

import numpy as np

from .dynamics import BlockLayout, assemble_system
from .errors import DimensionMismatchError, InvalidParamsError
from .linalg import CareConfig, as_vector, care_residual
from .macro_net import (
    AggregationOperator,
    MacroTopology,
    complete_topology,
    generate_scale_free,
    ring_topology,
)
from .mfg import (
    CONTROL_SCALAR_ON_C,
    ControlMatrix,
    MfgPenalties,
    StationarySolver,
    build_control_matrix,
    build_penalties,
)
from .micro import CostParams, MicroNetwork

_INIT_MARKER = 0  # step marker reserved for initial-state draws


@dataclass(frozen=True)
class SimConfig:
    """Simulation knobs; demand statistics live in :class:`SimulationSetup`."""

    p: int = 1000
    dt: float = 0.1
    steps: int = 200
    seed: int = 1
    init_mean: float = 40.0
    init_std: float = 15.0
    q_weight: float = 1.0
    r_weight: float = 1.0
    s_weight: float = 0.0
    control_mode: str = CONTROL_SCALAR_ON_C
    projected: bool = False
    workers: int = 1
    samples_per_population: int = 1
    topology_kind: str = "scale-free"
    attach: int = 2
    topology_seed: int = 1
    record_states: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.init_std < 0:
            raise ValueError("init_std must be nonnegative")
        if self.steps < 1 or self.p < 2:
            raise ValueError("need steps >= 1 and p >= 2")
        if self.workers < 1 or self.samples_per_population < 1:
            raise ValueError("workers and samples_per_population must be >= 1")


@dataclass(frozen=True)
class SimulationSetup:
    """Everything a run needs: the physical network, its costs, demand
    statistics per node, and the simulation knobs."""

    net: MicroNetwork
    costs: CostParams
    demand_means: np.ndarray  # (n,), zero off sinks
    demand_stds: np.ndarray  # (n,), zero off sinks
    sim: SimConfig

    def __post_init__(self):
        means = as_vector(self.demand_means, "demand_means")
        stds = as_vector(self.demand_stds, "demand_stds")
        if means.shape[0] != self.net.n or stds.shape[0] != self.net.n:
            raise DimensionMismatchError("demand statistics must be per node")
        if (stds < 0).any():
            raise ValueError("demand_stds must be nonnegative")
        off = np.setdiff1d(np.arange(self.net.n), np.asarray(self.net.sink_nodes))
        if means[off].any() or stds[off].any():
            raise ValueError("demand statistics must be zero off sinks")
        object.__setattr__(self, "demand_means", means)
        object.__setattr__(self, "demand_stds", stds)


@dataclass
class AgentPopulation:
    """States of all populations; shape (p, samples, dim)."""

    states: np.ndarray
    means_snapshot: np.ndarray  # (p, dim), read-only during a step
    step_index: int

    @property
    def p(self) -> int:
        return self.states.shape[0]

    def refresh_snapshot(self) -> None:
        self.means_snapshot = self.states.mean(axis=1)


def _stream(seed: int, global_index: int, marker: int) -> np.random.Generator:
    """Counter-based stream; marker 0 is init, marker t+1 is step t."""
    key = ((seed & (2**64 - 1)) << 64) | ((global_index & 0xFFFFFFFF) << 32) | (
        marker & 0xFFFFFFFF
    )
    return np.random.Generator(np.random.Philox(key=key))


def init_population(setup: SimulationSetup, layout: BlockLayout) -> AgentPopulation:
    """Every coordinate drawn independently from N(init_mean, init_std^2);
    the projection flag clamps the u, c, mu blocks at initialization."""
    cfg = setup.sim
    d = layout.dim
    ns = cfg.samples_per_population
    states = np.empty((cfg.p, ns, d))
    for k in range(cfg.p):
        for s in range(ns):
            rng = _stream(cfg.seed, k * ns + s, _INIT_MARKER)
            states[k, s] = rng.normal(cfg.init_mean, cfg.init_std, size=d)
    if cfg.projected:
        mask = layout.nonneg_mask()
        states[..., mask] = np.maximum(states[..., mask], 0.0)
    pop = AgentPopulation(states=states, means_snapshot=states.mean(axis=1), step_index=0)
    return pop


def sample_demand(setup: SimulationSetup, rng: np.random.Generator) -> np.ndarray:
    """Fresh demand realization: normal draws on sinks, zero elsewhere."""
    w = np.zeros(setup.net.n)
    for node in setup.net.sink_nodes:
        w[node] = rng.normal(setup.demand_means[node], setup.demand_stds[node])
    return w


def build_topology(cfg: SimConfig) -> MacroTopology:
    if cfg.topology_kind == "scale-free":
        return generate_scale_free(cfg.p, cfg.attach, cfg.topology_seed)
    if cfg.topology_kind == "ring":
        return ring_topology(cfg.p)
    if cfg.topology_kind == "complete":
        return complete_topology(cfg.p)
    raise InvalidParamsError(f"unknown topology kind {cfg.topology_kind!r}")


def spread_metric(c_blocks) -> tuple[np.ndarray, float]:
    """Per-edge population standard deviation of capacities across agents
    and the max-over-edges aggregate."""
    c = np.asarray(c_blocks, dtype=float)
    if c.shape[0] < 2:
        raise ValueError("spread needs at least two agents")
    per_edge = c.std(axis=0, ddof=0)
    return per_edge, float(per_edge.max())


@dataclass
class TrajectoryLog:
    times: np.ndarray  # (steps+1,)
    c_values: np.ndarray  # (steps+1, p, m) population-mean capacities
    demands: np.ndarray  # (steps, p, n)
    spread_per_edge: np.ndarray  # (steps+1, m)
    spread_max: np.ndarray  # (steps+1,)
    spread_mean: np.ndarray  # (steps+1,)
    phi_residual: float
    setup: SimulationSetup
    final_states: np.ndarray  # (p, samples, dim)
    states: np.ndarray | None = None  # (steps+1, p, samples, dim) if recorded

    @property
    def steps(self) -> int:
        return self.times.shape[0] - 1


def _update_range(
    k_lo: int,
    k_hi: int,
    pop_states: np.ndarray,
    new_states: np.ndarray,
    demands_out: np.ndarray,
    rho: np.ndarray,
    setup: SimulationSetup,
    solver: StationarySolver,
    step: int,
    nonneg_mask: np.ndarray,
):
    """Advance agents [k_lo, k_hi); writes only rows in that range."""
    cfg = setup.sim
    ns = cfg.samples_per_population
    A = solver.sys.A
    C0 = solver.sys.C
    dslice = solver.sys.demand_slice
    PhiT = solver.Phi.T
    B = solver.B_ctrl.B
    Rinv_Bt = solver.gain
    Z_inv = solver.Z_inv
    dt = cfg.dt
    for k in range(k_lo, k_hi):
        rho_k = rho[k]
        q_rho = solver.q_diag * rho_k
        for s in range(ns):
            rng = _stream(cfg.seed, k * ns + s, step + 1)
            w = sample_demand(setup, rng)
            C = C0.copy()
            C[dslice] = -w
            H = Z_inv @ (q_rho - PhiT @ C)
            x = pop_states[k, s]
            v = -(Rinv_Bt @ (PhiT @ x + H))
            y = x + dt * (A @ x + B @ v + C)
            if cfg.projected:
                y[nonneg_mask] = np.maximum(y[nonneg_mask], 0.0)
            new_states[k, s] = y
            if s == 0:
                demands_out[k] = w
            else:  # mean demand across samples for the log
                demands_out[k] += (w - demands_out[k]) / (s + 1)


def step_population(
    pop: AgentPopulation,
    topo: MacroTopology,
    setup: SimulationSetup,
    solver: StationarySolver,
    aggregator: AggregationOperator | None = None,
) -> tuple[AgentPopulation, np.ndarray]:
    """One synchronous step: neighbor aggregates from the frozen snapshot,
    fresh demand per agent sample, per-agent H solve against the cached
    factorization, closed-loop Euler update, snapshot swap at the end.

    Returns the new population and the per-agent demand realizations.
    """
    cfg = setup.sim
    op = aggregator or AggregationOperator.from_topology(topo)
    rho = op.P @ pop.means_snapshot
    new_states = np.empty_like(pop.states)
    demands = np.empty((cfg.p, setup.net.n))
    mask = solver.sys.layout.nonneg_mask()
    if cfg.workers == 1:
        _update_range(
            0, cfg.p, pop.states, new_states, demands, rho, setup, solver,
            pop.step_index, mask,
        )
    else:
        bounds = np.linspace(0, cfg.p, cfg.workers + 1).astype(int)
        with concurrent.futures.ThreadPoolExecutor(cfg.workers) as pool:
            futures = [
                pool.submit(
                    _update_range, lo, hi, pop.states, new_states, demands,
                    rho, setup, solver, pop.step_index, mask,
                )
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            for f in futures:
                f.result()
    out = AgentPopulation(
        states=new_states,
        means_snapshot=new_states.mean(axis=1),
        step_index=pop.step_index + 1,
    )
    return out, demands


def run_simulation(
    setup: SimulationSetup, care_cfg: CareConfig | None = None
) -> TrajectoryLog:
    """Full pipeline: topology, stationary Riccati solve, stepping loop,
    spread metrics."""
    cfg = setup.sim
    layout = BlockLayout(m=setup.net.m, n=setup.net.n)
    sys = assemble_system(setup.net, setup.costs, setup.demand_means)
    pen = build_penalties(layout, cfg.q_weight, cfg.r_weight, cfg.s_weight, cfg.control_mode)
    B_ctrl = build_control_matrix(layout, cfg.control_mode)
    solver = StationarySolver(sys, B_ctrl, pen, care_cfg)
    phi_res = care_residual(sys.A, B_ctrl.B, pen.Q, pen.R, solver.Phi)
    topo = build_topology(cfg)
    op = AggregationOperator.from_topology(topo)
    pop = init_population(setup, layout)

    steps = cfg.steps
    m = setup.net.m
    c_values = np.empty((steps + 1, cfg.p, m))
    demands = np.empty((steps, cfg.p, setup.net.n))
    spread_pe = np.empty((steps + 1, m))
    spread_max = np.empty(steps + 1)
    spread_mean = np.empty(steps + 1)
    rec_states = (
        np.empty((steps + 1, cfg.p, cfg.samples_per_population, layout.dim))
        if cfg.record_states
        else None
    )

    def log_state(i, population):
        c = population.means_snapshot[:, layout.c]
        c_values[i] = c
        pe, agg = spread_metric(c)
        spread_pe[i] = pe
        spread_max[i] = agg
        spread_mean[i] = float(pe.mean())
        if rec_states is not None:
            rec_states[i] = population.states

    log_state(0, pop)
    for t in range(steps):
        pop, w = step_population(pop, topo, setup, solver, op)
        demands[t] = w
        log_state(t + 1, pop)

    return TrajectoryLog(
        times=np.arange(steps + 1) * cfg.dt,
        c_values=c_values,
        demands=demands,
        spread_per_edge=spread_pe,
        spread_max=spread_max,
        spread_mean=spread_mean,
        phi_residual=phi_res,
        setup=setup,
        final_states=pop.states,
        states=rec_states,
    )


# ---------------------------------------------------------------------------
# export


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_trajectory_csv(log: TrajectoryLog, path) -> None:
    """Long format: step,time,agent,edge,c_value."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,time,agent,edge,c_value\n")
        steps_p1, p, m = log.c_values.shape
        for i in range(steps_p1):
            t = _fmt(log.times[i])
            for k in range(p):
                row = log.c_values[i, k]
                for e in range(m):
                    fh.write(f"{i},{t},{k},{e},{_fmt(row[e])}\n")


def write_summary_csv(log: TrajectoryLog, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,time,spread_max,spread_mean\n")
        for i in range(log.times.shape[0]):
            fh.write(
                f"{i},{_fmt(log.times[i])},{_fmt(log.spread_max[i])},"
                f"{_fmt(log.spread_mean[i])}\n"
            )


def write_metadata(log: TrajectoryLog, path) -> None:
    cfg = log.setup.sim
    lines = [
        "capflow simulation metadata",
        f"agents={cfg.p}",
        f"samples_per_population={cfg.samples_per_population}",
        f"dt={_fmt(cfg.dt)}",
        f"steps={cfg.steps}",
        f"seed={cfg.seed}",
        f"topology={cfg.topology_kind} attach={cfg.attach} topology_seed={cfg.topology_seed}",
        f"init_mean={_fmt(cfg.init_mean)} init_std={_fmt(cfg.init_std)}",
        f"penalties q={_fmt(cfg.q_weight)} r={_fmt(cfg.r_weight)} s={_fmt(cfg.s_weight)}",
        f"control_mode={cfg.control_mode}",
        f"projected={cfg.projected}",
        f"workers={cfg.workers}",
        f"riccati_residual_fro={_fmt(log.phi_residual)}",
        f"demand_means={','.join(_fmt(v) for v in log.setup.demand_means)}",
        f"demand_stds={','.join(_fmt(v) for v in log.setup.demand_stds)}",
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
