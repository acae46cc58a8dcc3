import numpy as np
import pytest

from eroopt.erosion import ErosionParams, auto_c1
from eroopt.forward import solve_forward
from eroopt.io import read_gmsh
from eroopt.mesh import bend_mesh
from eroopt.verify import default_params


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def small_bend():
    return bend_mesh(2, 6, 3, 3)


@pytest.fixture(scope="session")
def coarse_bend():
    from eroopt.cli import shipped_mesh_path
    return read_gmsh(shipped_mesh_path())


@pytest.fixture(scope="session")
def small_state(small_bend, params):
    return solve_forward(small_bend, params)


@pytest.fixture(scope="session")
def coarse_state(coarse_bend, params):
    return solve_forward(coarse_bend, params)


@pytest.fixture(scope="session")
def coarse_eparams(coarse_bend, coarse_state):
    return auto_c1(coarse_bend, coarse_state, ErosionParams())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
