import os
import sys

import pytest
from hypothesis import HealthCheck, settings

from qmicroscopy.fock import SinglePhoton, TwinFock, table_params
from qmicroscopy.sampling import CalibrationCurve

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ALL_STATES = [SinglePhoton(), TwinFock(1), TwinFock(2), TwinFock(3)]


@pytest.fixture(params=ALL_STATES, ids=lambda s: s.label)
def state(request):
    return request.param


@pytest.fixture
def exact_curve(state):
    return CalibrationCurve.exact(state, table_params(state))


@pytest.fixture(scope="session")
def tf3_curve():
    st = TwinFock(3)
    return CalibrationCurve.exact(st, table_params(st))


def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for res in sorted(module.RESULTS, key=lambda r: r.number):
            terminalreporter.write_line(res.line())
