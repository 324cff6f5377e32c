import numpy as np
import pytest

from fracobs.domain import build_grid, make_cap_obstacle
from fracobs.lcp import assemble_operator, solve_obstacle


@pytest.fixture(scope="session")
def cap_solve():
    """Wide cap at s = 1/2 on a coarse grid."""
    g = build_grid(1, 0.5, 1.0, 1.0, 129, 65)
    op = assemble_operator(g)
    ob = make_cap_obstacle(0.2, 1.0, 0.6, 0.2)
    return g, op, ob, solve_obstacle(op, ob)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
