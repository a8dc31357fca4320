import numpy as np
import pytest

from fluidroute.validation import solved_table

ALL_TAGS = ("det", "uniform", "exp", "bpareto", "pareto")
CONTINUOUS_TAGS = ("uniform", "exp", "bpareto", "pareto")


@pytest.fixture(scope="session")
def exp07():
    return solved_table("exp", 0.7)


@pytest.fixture(scope="session")
def exp03():
    return solved_table("exp", 0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT

    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
