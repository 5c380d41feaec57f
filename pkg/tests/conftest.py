import numpy as np
import pytest

from sphere_ot.grid import SphereGrid


@pytest.fixture(scope="session")
def grid24():
    return SphereGrid(24)


@pytest.fixture(scope="session")
def grid32():
    return SphereGrid(32)


@pytest.fixture(scope="session")
def grid48():
    return SphereGrid(48)


def random_sphere_points(rng, m):
    pts = rng.normal(size=(m, 3))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)
