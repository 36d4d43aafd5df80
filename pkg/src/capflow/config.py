"""Configuration parsing, validation, and round-trippable export.

Configurations are TOML with dense row lists for matrices. The bundled
``paper`` configuration reproduces the default 6-node / 9-edge instance.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import replace

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .errors import (
    CapflowError,
    ConfigParseError,
    ConfigValidationError,
)
from .micro import CostParams, build_micro_network
from .sim import SimConfig, SimulationSetup

BUNDLED = {"paper"}


def bundled_config_text(name: str = "paper") -> str:
    if name not in BUNDLED:
        raise ConfigParseError(f"unknown bundled config {name!r}")
    return (
        importlib.resources.files("capflow.data").joinpath(f"{name}.toml").read_text()
    )


def _section(doc: dict, name: str) -> dict:
    if name not in doc:
        raise ConfigParseError(f"missing section [{name}]")
    return doc[name]


def _get(section: dict, section_name: str, key: str, default=_section):
    if key not in section:
        if default is not _section:
            return default
        raise ConfigParseError(f"missing field {key!r} in section [{section_name}]")
    return section[key]


def parse_config_text(text: str) -> SimulationSetup:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"TOML parse failure: {exc}") from exc
    return _build_setup(doc)


def parse_config(path) -> SimulationSetup:
    """Load and validate a configuration; ``path`` may also name a bundled
    configuration (currently just ``paper``)."""
    if str(path) in BUNDLED:
        return parse_config_text(bundled_config_text(str(path)))
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigParseError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"TOML parse failure in {path}: {exc}") from exc
    return _build_setup(doc)


def _build_setup(doc: dict) -> SimulationSetup:
    net_sec = _section(doc, "network")
    cost_sec = _section(doc, "costs")
    dem_sec = _section(doc, "demand")
    pen_sec = _section(doc, "penalties")
    sim_sec = _section(doc, "simulation")
    topo_sec = _section(doc, "topology")

    try:
        net = build_micro_network(
            incidence=np.asarray(_get(net_sec, "network", "incidence"), dtype=float),
            sink_nodes=_get(net_sec, "network", "sinks"),
            edge_labels=_get(net_sec, "network", "edge_labels", None),
        )
        costs = CostParams(
            q1=_get(cost_sec, "costs", "q1"),
            q2=_get(cost_sec, "costs", "q2"),
            f1=_get(cost_sec, "costs", "f1"),
            f2=_get(cost_sec, "costs", "f2"),
        )
        sim = SimConfig(
            p=int(_get(sim_sec, "simulation", "agents")),
            dt=float(_get(sim_sec, "simulation", "dt")),
            steps=int(_get(sim_sec, "simulation", "steps")),
            seed=int(_get(sim_sec, "simulation", "seed")),
            init_mean=float(_get(sim_sec, "simulation", "init_mean")),
            init_std=float(_get(sim_sec, "simulation", "init_std")),
            q_weight=float(_get(pen_sec, "penalties", "q_weight")),
            r_weight=float(_get(pen_sec, "penalties", "r_weight")),
            s_weight=float(_get(pen_sec, "penalties", "s_weight", 0.0)),
            control_mode=str(_get(pen_sec, "penalties", "control_mode", "scalar-on-c")),
            projected=bool(_get(sim_sec, "simulation", "projected", False)),
            workers=int(_get(sim_sec, "simulation", "workers", 1)),
            samples_per_population=int(
                _get(sim_sec, "simulation", "samples_per_population", 1)
            ),
            topology_kind=str(_get(topo_sec, "topology", "kind", "scale-free")),
            attach=int(_get(topo_sec, "topology", "attach", 2)),
            topology_seed=int(_get(topo_sec, "topology", "seed", 1)),
        )
        setup = SimulationSetup(
            net=net,
            costs=costs,
            demand_means=_get(dem_sec, "demand", "means"),
            demand_stds=_get(dem_sec, "demand", "stds"),
            sim=sim,
        )
    except ConfigParseError:
        raise
    except (CapflowError, ValueError) as exc:
        raise ConfigValidationError(f"{type(exc).__name__}: {exc}") from exc
    return setup


def _fmt_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(float(v))
    return f'"{v}"'


def _fmt_vector(v) -> str:
    return "[" + ", ".join(_fmt_scalar(_as_num(x)) for x in np.asarray(v)) + "]"


def _as_num(x):
    xf = float(x)
    return int(xf) if xf == int(xf) else xf


def export_config(setup: SimulationSetup, path) -> None:
    """Write a TOML file that re-parses to an identical configuration."""
    net, costs, sim = setup.net, setup.costs, setup.sim
    rows = ",\n  ".join(_fmt_vector(r) for r in net.incidence)
    labels = ", ".join(f'"{s}"' for s in net.edge_labels)
    text = f"""[network]
incidence = [
  {rows},
]
sinks = {_fmt_vector(net.sink_nodes)}
edge_labels = [{labels}]

[costs]
q1 = {_fmt_vector(costs.q1)}
q2 = {_fmt_vector(costs.q2)}
f1 = {_fmt_vector(costs.f1)}
f2 = {_fmt_vector(costs.f2)}

[demand]
means = {_fmt_vector(setup.demand_means)}
stds = {_fmt_vector(setup.demand_stds)}

[penalties]
q_weight = {_fmt_scalar(float(sim.q_weight))}
r_weight = {_fmt_scalar(float(sim.r_weight))}
s_weight = {_fmt_scalar(float(sim.s_weight))}
control_mode = {_fmt_scalar(sim.control_mode)}

[simulation]
agents = {sim.p}
dt = {_fmt_scalar(float(sim.dt))}
steps = {sim.steps}
seed = {sim.seed}
init_mean = {_fmt_scalar(float(sim.init_mean))}
init_std = {_fmt_scalar(float(sim.init_std))}
projected = {_fmt_scalar(sim.projected)}
workers = {sim.workers}
samples_per_population = {sim.samples_per_population}

[topology]
kind = {_fmt_scalar(sim.topology_kind)}
attach = {sim.attach}
seed = {sim.topology_seed}
"""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def apply_overrides(
    setup: SimulationSetup,
    seed: int | None = None,
    agents: int | None = None,
    steps: int | None = None,
    dt: float | None = None,
    q_weight: float | None = None,
    r_weight: float | None = None,
    s_weight: float | None = None,
    workers: int | None = None,
) -> SimulationSetup:
    sim = setup.sim
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if agents is not None:
        updates["p"] = agents
    if steps is not None:
        updates["steps"] = steps
    if dt is not None:
        updates["dt"] = dt
    if q_weight is not None:
        updates["q_weight"] = q_weight
    if r_weight is not None:
        updates["r_weight"] = r_weight
    if s_weight is not None:
        updates["s_weight"] = s_weight
    if workers is not None:
        updates["workers"] = workers
    if not updates:
        return setup
    try:
        sim = replace(sim, **updates)
    except ValueError as exc:
        raise ConfigValidationError(str(exc)) from exc
    return replace(setup, sim=sim)
