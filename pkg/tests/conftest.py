import pytest

from ditree.dynamics import CarParams
from ditree.workspace import RobotGeometry

# acceptance criterion number -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture
def params():
    return CarParams()


@pytest.fixture
def geom():
    return RobotGeometry()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
