import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gklab.rates import make_constant, make_double_well, make_pair  # noqa: E402


@pytest.fixture(scope="session")
def const_model():
    return make_constant(1.0)


@pytest.fixture(scope="session")
def pair_model():
    return make_pair(2.0)


@pytest.fixture(scope="session")
def dw_model():
    return make_double_well(1.0, 4.0)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
