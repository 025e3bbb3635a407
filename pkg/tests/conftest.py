import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from d2dpower.sim import SimConfig
from d2dpower.topology import TopologyParams, build_topology, generate_topology

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# lines collected by the acceptance tests, echoed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_topology():
    return generate_topology(TopologyParams(), seed=2024)


@pytest.fixture
def small_config():
    return SimConfig(topology=TopologyParams(num_pairs=4), horizon=150, num_topologies=2, seed=3)


@pytest.fixture
def line_topology():
    # three pairs on a line, 60 m apart; sensing 100 m links 0-1 and 1-2 only
    tx = np.array([[0.0, 0.0], [60.0, 0.0], [120.0, 0.0]])
    rx = tx + np.array([10.0, 0.0])
    return build_topology(tx, rx, 100.0)
