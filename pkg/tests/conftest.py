import numpy as np
import pytest

from parametrix import coefficients as C
from parametrix.engine import ParametrixEngine

SINE_T = 0.25
SINE_POLE = 0.3


@pytest.fixture(scope="session")
def sine_engine():
    """Sine preset engine; the pole 0.3 tabulation is shared across modules."""
    return ParametrixEngine(C.sine1d(), SINE_T)


@pytest.fixture(scope="session")
def logdini_engine():
    return ParametrixEngine(C.log_dini_field(kappa=0.1, alpha=3.0), 0.25)


@pytest.fixture(scope="session")
def const_engine():
    return ParametrixEngine(C.constant(np.eye(1), lambda_ell=2.0), 1.0)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
