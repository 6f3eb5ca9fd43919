import numpy as np
import pytest

from gmmnls import _backend


@pytest.fixture(params=_backend.available())
def backend(request):
    """Run the test once per available kernel backend."""
    previous = _backend.name
    _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
