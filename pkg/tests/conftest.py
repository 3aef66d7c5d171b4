import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qlangevin import chains, domain as dm, potential as pot

settings.register_profile("repo", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

# Double well on [-2.5, 2.5]: the largest |f''| = 3x^2 - 1 is 17.75 and
# <f'(x), x> = x^4 - x^2 >= x^2 - 1 gives (m, b) = (1, 1).
DW_CONSTANTS = pot.AssumptionConstants(L=17.75, m=1.0, b=1.0, G=0.0)

# Acceptance verdicts collected by tests/test_acceptance.py: criterion -> list of (part, passed, detail).
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


def record(criterion: int, part: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        verdict = "PASS" if all(p for _, p, _ in parts) else "FAIL"
        detail = "; ".join(f"{name}={'ok' if p else 'FAIL'} ({d})" if d else f"{name}={'ok' if p else 'FAIL'}"
                           for name, p, d in parts)
        terminalreporter.write_line(f"criterion {k}: {verdict} -- {detail}")


@pytest.fixture(scope="session")
def dw_grid():
    return dm.build_grid(1, 2.5, 33)


@pytest.fixture(scope="session")
def dw_landscape(dw_grid):
    """Double-well constants with the measured landscape constants on n=33."""
    return chains.measure_landscape(pot.double_well(1), DW_CONSTANTS, dw_grid, 0.01)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", chains.StepSizeWarning)
        yield


def two_state_kernel(a=0.3, b=0.1):
    P = np.array([[1 - a, a], [b, 1 - b]])
    return chains.MarkovKernel(P, False, "custom", 1.0, 1.0)
