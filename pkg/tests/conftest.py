import numpy as np
import pytest

from czgrape.model import DeviceParams

REPORT = []


def pytest_terminal_summary(terminalreporter):
    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(REPORT, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def report():
    """Record ``CRITERION n: PASS|FAIL detail`` lines for the terminal summary."""

    def record(number, ok, detail):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}"
        REPORT.append(line)
        print(line)
        return ok

    return record


@pytest.fixture(scope="session")
def table1():
    return DeviceParams(6.1, (6.778, 6.607), (0.040, 0.054), (-0.071, -0.059))


@pytest.fixture(scope="session")
def dimless():
    return DeviceParams.dimensionless()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
