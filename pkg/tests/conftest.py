import pytest
from hypothesis import settings

from tbregsim import fitting
from tbregsim.dosing import preset_schedule
from tbregsim.homeostasis import high_tumor_state, reference_parameters, zero_tumor_state
from tbregsim.solver import integrate

settings.register_profile("repo", deadline=None, derandomize=True, database=None)
settings.load_profile("repo")

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session", autouse=True)
def warm_jit():
    """Load (or compile) the numba kernels once so timed tests measure only the work."""
    P = reference_parameters()
    integrate(high_tumor_state().to_model_state(), P, preset_schedule(1), (0.0, 1.0))
    cfg = fitting.AssayConfig.tumor_assay().with_form("power", (1e-7, 1.2))
    fitting.lysis_curve(cfg, [1.0])


@pytest.fixture(scope="session")
def P():
    return reference_parameters()


@pytest.fixture(scope="session")
def E0():
    return zero_tumor_state().to_model_state()


@pytest.fixture(scope="session")
def E1():
    return high_tumor_state().to_model_state()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
