import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from finsler_hardy.structures import FinslerStructure

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    """Print one pass/fail line per acceptance criterion and keep it for the summary."""

    def rec(number, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return rec


@pytest.fixture(scope="session")
def families():
    return {
        "euclidean": FinslerStructure.euclidean(3),
        "riemannian": FinslerStructure.riemannian(np.diag([1.0, 4.0, 9.0])),
        "randers": FinslerStructure.randers(np.eye(3), [0.5, 0.0, 0.0]),
        "funk": FinslerStructure.funk(3),
    }
