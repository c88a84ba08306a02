"""Shared bodies and fields. Session-scoped: meshes are immutable."""

import numpy as np
import pytest

from asterhop import shapes
from asterhop.dynamics import Environment
from asterhop.gravity import build_field

RHO = 1900.0


@pytest.fixture(scope="session")
def cube():
    return shapes.cube(1.0)


@pytest.fixture(scope="session")
def tetra():
    return shapes.tetrahedron(1.0)


@pytest.fixture(scope="session")
def sphere():
    """Icosphere, R = 100 m, 1280 facets."""
    return shapes.icosphere(100.0, 3)


@pytest.fixture(scope="session")
def sphere_field(sphere):
    return build_field(sphere, RHO)


@pytest.fixture(scope="session")
def sphere_env(sphere_field):
    return Environment(sphere_field)


@pytest.fixture(scope="session")
def ellipsoid():
    """Itokawa-scale ellipsoid, 550 x 300 x 250 m, 1280 facets."""
    return shapes.ellipsoid(275.0, 150.0, 125.0, 3)


@pytest.fixture(scope="session")
def lumpy():
    return shapes.lumpy_asteroid(275.0, 150.0, 125.0, subdivisions=3, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    ang = rng.uniform(0, max_angle)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(ang) * K + (1 - np.cos(ang)) * K @ K


# acceptance lines, printed as one block at the end of the run
ACCEPTANCE = {}


def record(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
