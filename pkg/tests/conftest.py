"""Shared fixtures: the default 6-node / 9-edge instance and its derived
objects, built once per session because the CARE solve and simulator runs
dominate the suite's runtime."""

import sys

import numpy as np
import pytest

from capflow.config import parse_config
from capflow.dynamics import BlockLayout, assemble_system
from capflow.mfg import StationarySolver, build_control_matrix, build_penalties


@pytest.fixture(scope="session")
def default_setup():
    return parse_config("paper")


@pytest.fixture(scope="session")
def net(default_setup):
    return default_setup.net


@pytest.fixture(scope="session")
def costs(default_setup):
    return default_setup.costs


@pytest.fixture(scope="session")
def demand_mean(default_setup):
    return np.asarray(default_setup.demand_means, dtype=float)


@pytest.fixture(scope="session")
def layout(net):
    return BlockLayout(m=net.m, n=net.n)


@pytest.fixture(scope="session")
def system(net, costs, demand_mean):
    return assemble_system(net, costs, demand_mean)


@pytest.fixture(scope="session")
def penalties(layout):
    return build_penalties(layout, 1.0, 1.0)


@pytest.fixture(scope="session")
def control(layout):
    return build_control_matrix(layout)


@pytest.fixture(scope="session")
def stationary(system, control, penalties):
    return StationarySolver(system, control, penalties)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance-criteria verdicts collected during the run."""
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "VERDICTS", None):
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in mod.VERDICTS:
        terminalreporter.write_line(line)
