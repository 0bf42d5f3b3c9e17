import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from meshforge.mesh import TriangleMesh  # noqa: E402


@pytest.fixture
def tetra():
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    t = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    m = TriangleMesh(v, t)
    if m.signed_volume() < 0:
        m = TriangleMesh(v, t[:, ::-1])
    return m


@pytest.fixture
def single_triangle():
    return TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float), np.array([[0, 1, 2]]))


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s[1:3])):
            terminalreporter.write_line(line)
