from __future__ import annotations

import numpy as np
import pytest

from flowmpc.tasks import get_task
from flowmpc.velocity import GaussianVelocityField


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for the acceptance summary."""
    def emit(number: int, passed: bool, detail: str):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        print(line)
        request.config.acceptance_lines.append(line)
        return passed
    return emit


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def standard_field():
    return GaussianVelocityField(n_features=2).fit()


@pytest.fixture(scope="session")
def gauss_mlp():
    return get_task("gauss2d/halfspace").train_network()


@pytest.fixture(scope="session")
def planar_task():
    return get_task("planar-traj")


@pytest.fixture(scope="session")
def planar_field(planar_task):
    return planar_task.default_field(0)


@pytest.fixture(scope="session")
def burgers_task():
    return get_task("mini-burgers")


@pytest.fixture(scope="session")
def burgers_field(burgers_task):
    return burgers_task.default_field(0)
