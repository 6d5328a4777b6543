import pytest

from idvfs.energy_model import bundled_energy_table
from idvfs.windows import msp430g2553_windows

# Filled by tests/test_acceptance.py, printed once at the end of the session.
ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture(scope="session")
def table():
    return msp430g2553_windows()


@pytest.fixture(scope="session")
def energy():
    return bundled_energy_table()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
