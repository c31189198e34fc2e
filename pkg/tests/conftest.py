import numpy as np
import pytest

from yieldvi.mesh import assemble_stiffness, build_grid


@pytest.fixture
def grid1d():
    return build_grid(1, 63)


@pytest.fixture
def op1d(grid1d):
    return assemble_stiffness(grid1d, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
