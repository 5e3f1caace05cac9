import pytest

from helpers import ACCEPTANCE_LINES, desk_simulator


@pytest.fixture(scope="session")
def desk_sim():
    return desk_simulator(0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
