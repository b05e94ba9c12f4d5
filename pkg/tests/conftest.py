import numpy as np
import pytest

from passopt.graph import path_graph, ring_graph
from passopt.problem import quadratic_problem

# targets of the 5-agent quadratic presets
RING_TARGETS = [[0, 1], [2, 0], [4, 3], [1, 5], [3, 2]]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ring5():
    return ring_graph(5, a=1.0, b=3.0)


@pytest.fixture
def path2():
    return path_graph(2, a=1.0, b=1.0)


@pytest.fixture
def ring_quadratic():
    return quadratic_problem(RING_TARGETS)


@pytest.fixture
def two_agent_scalar():
    # f_1 = z^2/2, f_2 = (z-2)^2/2, optimum z* = 1
    return quadratic_problem([[0.0], [2.0]])


# --- acceptance reporting ------------------------------------------------------

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line per acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}  {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _VERDICTS.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
