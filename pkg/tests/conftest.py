import numpy as np
import pytest

from pstbench.geometry import GeometrySpec, build_primitive
from pstbench.pst import ContrastParams, solve_densities


@pytest.fixture(scope="session")
def spheres():
    """Icosphere meshes with 80, 320 and 1280 triangles."""
    return [build_primitive(GeometrySpec("sphere", {}, s)) for s in (1, 2, 3)]


@pytest.fixture(scope="session")
def cube():
    return build_primitive(GeometrySpec("cube"))


@pytest.fixture(scope="session")
def sphere_solution(spheres):
    return solve_densities(spheres[2], ContrastParams(10.0, 0.01))


def rel_l2(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b)


#: One line per acceptance criterion, filled by ``test_acceptance.py``.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
