import numpy as np
import pytest

from martlab.filtration import build_product_grid
from martlab.prob import FiniteProbSpace

# one line per acceptance criterion check, printed after the run
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


def record(criterion: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_LINES.append((criterion, bool(passed), detail))


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


def coin():
    return FiniteProbSpace([0.5, 0.5])


@pytest.fixture
def rademacher_grid():
    """Two independent fair signs; eps is the row coordinate, delta the column one."""
    space, G = build_product_grid([coin()], [coin()])
    idx = np.indices((2, 2)).reshape(2, -1)
    eps = 1.0 - 2.0 * idx[0]
    delta = 1.0 - 2.0 * idx[1]
    return space, G, eps, delta
