import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from steerloc.geometry import build_grid, build_tdoa_table, prism_array

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid4():
    return build_grid(4)


@pytest.fixture(scope="session")
def grid2():
    return build_grid(2)


@pytest.fixture(scope="session")
def prism():
    return prism_array()


@pytest.fixture(scope="session")
def prism_table(prism, grid4):
    return build_tdoa_table(prism, grid4)


def random_unit_vectors(rng, n):
    u = rng.standard_normal((n, 3))
    return u / np.linalg.norm(u, axis=1, keepdims=True)
