"""Capacity design of flow networks: primal-dual dynamics per agent,
coupled into a linear-quadratic mean-field game with consensus on edge
capacities, plus an exact QP oracle for benchmarking."""

from . import (
    config,
    consensus,
    dynamics,
    errors,
    linalg,
    macro_net,
    mfg,
    micro,
    sim,
)

__version__ = "0.1.0"

__all__ = [
    "config",
    "consensus",
    "dynamics",
    "errors",
    "linalg",
    "macro_net",
    "mfg",
    "micro",
    "sim",
    "__version__",
]
