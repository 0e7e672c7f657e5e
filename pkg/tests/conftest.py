import pytest

from gppde import _backend


@pytest.fixture
def backend():
    """Yield a setter for the active backend and restore the previous one afterwards."""
    previous = _backend.name()
    yield _backend.set_backend
    _backend.set_backend(previous)


def pytest_report_header(config):
    return f"gppde backend: {_backend.name()} (available: {', '.join(_backend.available())})"


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import GATE

    if GATE:
        terminalreporter.section("acceptance gate")
        for line in GATE:
            terminalreporter.write_line(line)
