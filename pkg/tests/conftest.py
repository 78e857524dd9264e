import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import pytest

from gkdv_lab.nonlinearity import power
from gkdv_lab.profile import soliton
from gkdv_lab.spectral import spectral_data

# filled by test_acceptance, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def sol3():
    return soliton(power(3.0), 1.0)


@pytest.fixture(scope="session")
def sol7():
    return soliton(power(7.0), 1.0)


@pytest.fixture(scope="session")
def spec7(sol7):
    return spectral_data(sol7, n=512, rho=5.0, refine=False, coercivity=False)
