import numpy as np
import pytest

from lameeig import mesh as meshmod


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def square4():
    return meshmod.build_unit_square(4)


@pytest.fixture(scope="session")
def hole_mesh():
    return meshmod.build_square_with_hole()


@pytest.fixture(scope="session")
def lshape_mesh():
    return meshmod.build_lshape_3d()
