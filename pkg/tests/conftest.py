import numpy as np
import pytest

from lossytat import AttenuationLaw, Phantom, TimeGrid


def rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


@pytest.fixture(scope="session")
def law15():
    return AttenuationLaw.reference(1.5, 0.02)


@pytest.fixture(scope="session")
def grid512():
    return TimeGrid.covering(3.0, 512)


@pytest.fixture(scope="session")
def ball():
    return Phantom.single((0.0, 0.0, 0.0), 0.25, R0=1.0)


ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; it is echoed now and again in the terminal summary."""

    def _report(number, passed, text):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {text}"
        ACCEPTANCE.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
