import numpy as np
import pytest

from conformer import tensor as tt

ACCEPTANCE_LINES = []


@pytest.fixture(autouse=True)
def _f64_fresh_tape():
    tt.set_default_dtype("float64")
    tt.current_tape().reset()
    yield
    tt.set_default_dtype("float64")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def report_criterion():
    def report(number, title, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}"
        if detail:
            line += f" ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
