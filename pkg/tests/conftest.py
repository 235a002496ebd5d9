import numpy as np
import pytest

from etconsensus.config import bundled_config_path, load
from etconsensus.topology import build_topology

# Filled by the acceptance tests, echoed at the end of the session.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def g1():
    return load(bundled_config_path("g1"))


@pytest.fixture(scope="session")
def g2():
    return load(bundled_config_path("g2"))


@pytest.fixture
def pair():
    """N=2, one unit edge, leader heard by agent 1 only."""
    return build_topology(np.array([[0.0, 1.0], [1.0, 0.0]]), [1.0, 0.0])


@pytest.fixture
def path3():
    return build_topology(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float), [0.0, 0.0, 1.0])
