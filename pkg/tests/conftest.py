import numpy as np
import pytest

from ddjj.core import CouplingModel, LatticeParams
from ddjj.twomode import RateModelParams


@pytest.fixture
def default_rate():
    return RateModelParams()


@pytest.fixture
def constant_rate():
    return RateModelParams(LatticeParams(), CouplingModel.constant(), kappa_coefficient=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


@pytest.fixture
def report():
    """Record one acceptance verdict; collected lines print in the summary."""

    def _report(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
