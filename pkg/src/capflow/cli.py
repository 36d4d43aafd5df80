"""Command-line entry point: simulate, oracle, pd-run, consensus-analyze,
care-check."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .consensus import (
    FORM_FULL_STACKED,
    build_consensus_system,
    consensus_equilibrium,
    verify_convergence,
)
from .dynamics import BlockLayout, StackedState, assemble_system, pd_run
from .errors import CapflowError, ConfigParseError, ConfigValidationError
from .linalg import CARE_FORM_PAPER, CARE_FORM_STANDARD, care_residual, is_hurwitz
from .mfg import StationarySolver, build_control_matrix, build_penalties
from .micro import kkt_residual, solve_deterministic_qp, suboptimality_gap
from .sim import (
    TrajectoryLog,
    build_topology,
    run_simulation,
    write_metadata,
    write_summary_csv,
    write_trajectory_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

MODES = ("simulate", "oracle", "pd-run", "consensus-analyze", "care-check")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="capflow",
        description=(
            "Capacity design of flow networks by primal-dual dynamics "
            "coupled into a mean-field game"
        ),
    )
    ap.add_argument("--mode", choices=MODES, default="simulate")
    ap.add_argument("--config", default="paper", help="TOML path or 'paper'")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--no-plot", action="store_true")
    ap.add_argument("--agents", type=int, default=None, help="override agent count")
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--dt", type=float, default=None)
    ap.add_argument("--q", type=float, default=None, help="state-deviation penalty")
    ap.add_argument("--r", type=float, default=None, help="control penalty")
    ap.add_argument("--s", type=float, default=None, help="terminal penalty")
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--omega", default=None, help="comma-separated demand vector")
    ap.add_argument(
        "--point",
        default=None,
        help="heuristic point 'u1,..,um;c1,..,cm' for the oracle gap report",
    )
    return ap


def _parse_vec(text: str) -> np.ndarray:
    return np.array([float(tok) for tok in text.split(",")])


def emit_plots(log: TrajectoryLog, output_dir: Path, max_agents: int = 200) -> Path:
    """One SVG line chart: capacity trajectories per agent per edge,
    subsampled for legibility. File bytes are deterministic for a log."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if log.times.shape[0] == 0:
        raise ValueError("empty trajectory log")
    plt.rcParams["svg.hashsalt"] = "capflow"
    p = log.c_values.shape[1]
    agent_idx = np.arange(p) if p <= max_agents else np.linspace(0, p - 1, max_agents).astype(int)
    m = log.c_values.shape[2]
    fig, ax = plt.subplots(figsize=(8, 5))
    cmap = plt.get_cmap("tab10")
    for e in range(m):
        color = cmap(e % 10)
        for k in agent_idx:
            ax.plot(log.times, log.c_values[:, k, e], color=color, lw=0.3, alpha=0.4)
    ax.set_xlabel("time")
    ax.set_ylabel("capacity")
    ax.set_title("capacity trajectories (one bundle per edge)")
    out = output_dir / "capacity_trajectories.svg"
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


def _cmd_simulate(setup, args, out: Path) -> int:
    log = run_simulation(setup)
    write_trajectory_csv(log, out / "trajectory.csv")
    write_summary_csv(log, out / "summary.csv")
    write_metadata(log, out / "run_metadata.txt")
    if not args.no_plot:
        emit_plots(log, out)
    ratio = log.spread_max[-1] / log.spread_max[0] if log.spread_max[0] > 0 else 0.0
    print(
        f"simulate: {setup.sim.p} agents, {setup.sim.steps} steps, "
        f"spread {log.spread_max[0]:.4g} -> {log.spread_max[-1]:.4g} "
        f"(ratio {ratio:.4g}); outputs in {out}"
    )
    return EXIT_OK


def _cmd_oracle(setup, args, out: Path) -> int:
    w = _parse_vec(args.omega) if args.omega else setup.demand_means
    sol = solve_deterministic_qp(setup.net, setup.costs, w)
    res = kkt_residual(setup.net, setup.costs, sol, w)
    print("oracle solution (edge: flow, capacity, multiplier):")
    for e, label in enumerate(setup.net.edge_labels):
        print(f"  {label}: u={sol.u[e]:.6f}  c={sol.c[e]:.6f}  mu={sol.mu[e]:.6f}")
    print(f"objective = {sol.objective:.8f}")
    print(f"max KKT residual = {res.max_abs():.3e}")
    if args.point is not None:
        u_txt, c_txt = args.point.split(";")
        u, c = _parse_vec(u_txt), _parse_vec(c_txt)
    else:
        sys_m = assemble_system(setup.net, setup.costs, w)
        x0 = StackedState.zeros(sys_m.layout)
        run = pd_run(sys_m, setup.net, setup.costs, w, x0)
        u, c = run.state.u, run.state.c
        print(f"primal-dual point after {run.steps_taken} steps (converged={run.converged})")
    gap = suboptimality_gap(u, c, sol, setup.costs, setup.net, w)
    print(f"suboptimality gap = {gap:.6e}")
    return EXIT_OK


def _cmd_pd_run(setup, args, out: Path) -> int:
    w = _parse_vec(args.omega) if args.omega else setup.demand_means
    sys_m = assemble_system(setup.net, setup.costs, w)
    x0 = StackedState.zeros(sys_m.layout)
    dt = args.dt if args.dt is not None else 1e-3
    steps = args.steps if args.steps is not None else 1_000_000
    run = pd_run(sys_m, setup.net, setup.costs, w, x0, dt=dt, max_steps=steps)
    print(
        f"pd-run: steps={run.steps_taken} converged={run.converged} "
        f"movement_rate={run.drift_sup:.3e} max_kkt={run.kkt.max_abs():.3e}"
    )
    print("u =", np.array2string(run.state.u, precision=6))
    print("c =", np.array2string(run.state.c, precision=6))
    return EXIT_OK if run.converged else EXIT_NUMERICAL


def _cmd_consensus(setup, args, out: Path) -> int:
    sim = setup.sim
    layout = BlockLayout(m=setup.net.m, n=setup.net.n)
    sys_m = assemble_system(setup.net, setup.costs, setup.demand_means)
    pen = build_penalties(layout, sim.q_weight, sim.r_weight, sim.s_weight, sim.control_mode)
    B_ctrl = build_control_matrix(layout, sim.control_mode)
    solver = StationarySolver(sys_m, B_ctrl, pen)
    topo = build_topology(sim)
    from .mfg import ValueCoeffs

    coeffs = ValueCoeffs(Phi=solver.Phi, H=np.zeros(layout.dim), chi=None, stationary=True)
    cs = build_consensus_system(topo, sys_m, B_ctrl, pen, coeffs, FORM_FULL_STACKED)
    report = verify_convergence(cs)
    print(
        f"consensus-analyze: hurwitz={report.hurwitz} "
        f"abscissa={report.spectral_abscissa:.6e} rate={report.predicted_rate:.6e}"
    )
    lines = [
        "quantity,value",
        f"hurwitz,{report.hurwitz}",
        f"spectral_abscissa,{report.spectral_abscissa!r}",
        f"predicted_rate,{report.predicted_rate!r}",
    ]
    if cs.dim <= 6000:
        eq = consensus_equilibrium(cs)
        c_eq = eq[:, layout.c]
        print("equilibrium capacity means (agent 0):", np.array2string(c_eq[0], precision=6))
        for e in range(setup.net.m):
            lines.append(f"equilibrium_c_edge_{e},{c_eq[0, e]!r}")
    (out / "consensus_report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_care_check(setup, args, out: Path) -> int:
    sim = setup.sim
    layout = BlockLayout(m=setup.net.m, n=setup.net.n)
    sys_m = assemble_system(setup.net, setup.costs, setup.demand_means)
    pen = build_penalties(layout, sim.q_weight, sim.r_weight, sim.s_weight, sim.control_mode)
    B_ctrl = build_control_matrix(layout, sim.control_mode)
    solver = StationarySolver(sys_m, B_ctrl, pen)
    res_std = care_residual(sys_m.A, B_ctrl.B, pen.Q, pen.R, solver.Phi, CARE_FORM_STANDARD)
    res_lit = care_residual(sys_m.A, B_ctrl.B, pen.Q, pen.R, solver.Phi, CARE_FORM_PAPER)
    hur, absc = is_hurwitz(solver.closed_loop)
    print(f"care-check: residual_fro={res_std:.3e} (literal-form {res_lit:.3e})")
    print(f"closed loop hurwitz={hur} abscissa={absc:.6e}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        setup = cfgmod.parse_config(args.config)
        setup = cfgmod.apply_overrides(
            setup,
            seed=args.seed,
            agents=args.agents,
            steps=args.steps if args.mode == "simulate" else None,
            dt=args.dt if args.mode == "simulate" else None,
            q_weight=args.q,
            r_weight=args.r,
            s_weight=args.s,
            workers=args.workers,
        )
    except (ConfigParseError, ConfigValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    handlers = {
        "simulate": _cmd_simulate,
        "oracle": _cmd_oracle,
        "pd-run": _cmd_pd_run,
        "consensus-analyze": _cmd_consensus,
        "care-check": _cmd_care_check,
    }
    try:
        return handlers[args.mode](setup, args, out)
    except (ConfigParseError, ConfigValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CapflowError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
