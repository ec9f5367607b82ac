import sys

import numpy as np
import pytest

from zeroscale import Dataset


@pytest.fixture
def hand_lee():
    """Treated outcomes uniform on {0, 10, 20, 30}; control 0, 10, 20 w.p. .5, .25, .25."""
    y = np.array([0, 10, 20, 30, 0, 0, 10, 20], dtype=float)
    D = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=float)
    return Dataset(y, D)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines):
        terminalreporter.write_line(lines[key])
