import os

import pytest
from hypothesis import HealthCheck, settings

from photon_memory_sim import SechEnvelope, SystemParams
from photon_memory_sim.core import REFERENCE_KAPPA_LOSS_MHZ, mhz

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=15,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance lines, filled by test_acceptance and printed at the end of the run
ACCEPTANCE_LINES = {}


@pytest.fixture
def ref_params():
    return SystemParams.reference()


@pytest.fixture
def lossy_params():
    return SystemParams.reference(kappa_loss=mhz(REFERENCE_KAPPA_LOSS_MHZ))


@pytest.fixture
def ref_env():
    return SechEnvelope.from_tc(0.5)


@pytest.fixture
def small_params():
    """Few modes, short window: fast enough for the density-matrix oracle."""
    return SystemParams.reference(tc=0.5, n_modes=41, kappa_loss=mhz(0.33))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
