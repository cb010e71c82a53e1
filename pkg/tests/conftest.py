import numpy as np
import pytest
from hypothesis import settings

from msgn import HybridState, parse_network
from msgn.models import PURE_BIRTH, TELEGRAPH, TELEGRAPH_FEEDBACK

settings.register_profile("msgn", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("msgn")


@pytest.fixture(scope="session")
def telegraph():
    return parse_network(TELEGRAPH)


@pytest.fixture(scope="session")
def feedback():
    return parse_network(TELEGRAPH_FEEDBACK)


@pytest.fixture(scope="session")
def pure_birth():
    return parse_network(PURE_BIRTH)


@pytest.fixture
def z_on():
    return HybridState([1.0], [1])


def rng(seed=0):
    return np.random.default_rng(seed)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
