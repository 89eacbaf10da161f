import numpy as np
import pytest

from packopt.cases import desk_case, symmetric_case
from packopt.config import CaseConfig
from packopt.mesh import BoundaryTag, Mesh, rectangle_mesh


@pytest.fixture(scope="session")
def desk_mesh():
    """The ~5.7k-cell desk channel with four obstacles."""
    return desk_case()


@pytest.fixture(scope="session")
def coarse_desk():
    """A cheap desk variant for tests that only need a realistic geometry."""
    return desk_case(h=2.5e-4, segments=16)


@pytest.fixture(scope="session")
def sym_mesh():
    return symmetric_case(obstacles=1, h=2.5e-4, segments=16)


@pytest.fixture
def cfg():
    return CaseConfig()


@pytest.fixture
def unit_triangle():
    """One right triangle (0,0),(1,0),(0,1), every edge tagged CylWall."""
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return Mesh(v, np.array([[0, 1, 2]]), np.array([[0, 1], [1, 2], [2, 0]]),
                np.full(3, int(BoundaryTag.CYL_WALL)))


@pytest.fixture
def unit_square():
    return rectangle_mesh(4, 4, tags={"left": BoundaryTag.CYL_WALL, "right": BoundaryTag.CYL_WALL})


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
