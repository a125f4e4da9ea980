import numpy as np
import pytest

from transport_gates.trap import BERYLLIUM_9, make_surrogate_basis

OMEGA_TRAP = 2 * np.pi * 2e6


@pytest.fixture(scope="session")
def basis():
    """30 Gaussian electrodes on a 120 um pitch covering +-2 mm."""
    return make_surrogate_basis(30, 120e-6, 80e-6, 2000e-6)


@pytest.fixture(scope="session")
def species():
    return BERYLLIUM_9


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
