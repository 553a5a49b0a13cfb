import numpy as np
import pytest

from fdbackhaul.scenario import ScenarioConfig, build_topology, draw_channels

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def scenario():
    return ScenarioConfig()


@pytest.fixture
def channel(scenario):
    topo = build_topology(scenario, 3, "FD-SDMA")
    return draw_channels(topo, 11, 3)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_complex(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
