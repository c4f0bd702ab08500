import numpy as np
import pytest

from turbrestore.optics import OpticsParams
from turbrestore.prior import train_prior


@pytest.fixture(scope="session")
def optics():
    return OpticsParams()


@pytest.fixture(scope="session")
def small_basis():
    """Basis at D/r0 = 1.4 from a modest ensemble; enough for solver tests."""
    return train_prior([1.4], m=400, p=20, rng=np.random.default_rng(7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)



def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
