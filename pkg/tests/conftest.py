import numpy as np
import pytest
from hypothesis import settings

from rampopt.models import TwoQubitParams, build_two_qubit, make_scenario_states

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def two_qubit():
    return build_two_qubit(TwoQubitParams(1.0))


@pytest.fixture(scope="session")
def two_qubit_states(two_qubit):
    return make_scenario_states(two_qubit, 0.0, 4.0)


def random_state(rng, dim):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_hermitian(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return 0.5 * (a + a.conj().T)


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail):
    """Log one acceptance line; printed again in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
