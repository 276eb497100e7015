import numpy as np
import pytest

from cherenkov2d.dispersion import electron_kinematics
from cherenkov2d.eels_model import default_eels_grid
from cherenkov2d.inversion import PQPFamily
from cherenkov2d.materials import build_experiment_stack


@pytest.fixture(scope="session")
def stack():
    return build_experiment_stack()


@pytest.fixture(scope="session")
def kin200():
    return electron_kinematics(200.0)


@pytest.fixture(scope="session")
def eels_grid():
    return default_eels_grid()


@pytest.fixture(scope="session")
def family200(stack, kin200):
    """Emission spectra at 200 keV for x0 = 5..200 nm in 5 nm steps."""
    return PQPFamily.from_stack(stack, kin200, np.arange(5.0, 200.0 + 1e-9, 5.0))


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one line per acceptance criterion; echoed in the terminal summary."""
    lines = getattr(request.config, "_acceptance_lines", None)
    if lines is None:
        lines = request.config._acceptance_lines = []
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
