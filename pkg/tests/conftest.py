import pytest

from surface_grf import fem
from surface_grf.experiments import LevelCache
from surface_grf.geometry import Sphere, Torus
from surface_grf.mesh import make_mesh


@pytest.fixture(scope="session")
def sphere():
    return Sphere()


@pytest.fixture(scope="session")
def torus():
    return Torus(2.0, 0.5)


@pytest.fixture(scope="session")
def level_cache():
    """Shared meshes, factorisations and eigenbases for the Monte Carlo runs."""
    return LevelCache()


@pytest.fixture(scope="session")
def sphere_meshes(sphere):
    return {level: make_mesh(sphere, level) for level in range(5)}


@pytest.fixture(scope="session")
def sphere_matrices(sphere_meshes):
    """(M_Gamma, A, M_sigma) per sphere level."""
    return {
        level: (fem.assemble_mass(m), fem.assemble_stiffness(m), fem.assemble_weighted_mass(m))
        for level, m in sphere_meshes.items()
        if level <= 3
    }


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
