import numpy as np
import pytest

from eroopt.adjoint import solve_adjoint
from eroopt.erosion import ErosionParams, willmore_energy
from eroopt.mesh import bend_mesh, disk_mesh, rectangle_mesh
from eroopt.shape import (ALL_TERMS, VOLUME_BLOCKS, ShapeError, fit_slope, perimeter_dual,
                          random_admissible_field, restrict, shape_derivative,
                          shape_derivative_functional, shape_derivative_parts, taylor_test,
                          transformation_derivatives,
                          volume_dual, willmore_continuous_dual, willmore_dual)
from eroopt.verify import TaylorSetup, check_transformation


@pytest.fixture(scope="module")
def small_adjoint(small_bend, small_state):
    return solve_adjoint(small_bend, small_state, ErosionParams(c1=1e-3))


def test_transformation_derivatives():
    res = check_transformation(n_fields=4, mesh=rectangle_mesh(6, 6))
    assert res.passed, res.detail


def test_volume_functional_of_stretch():
    m = rectangle_mesh(7, 5)
    V = np.column_stack([m.vertices[:, 0], np.zeros(m.n_vertices)])
    assert np.sum(volume_dual(m) * V) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("n", [16, 64, 256])
def test_disk_perimeter_under_radial_field(n):
    m = disk_mesh(n)
    p = np.sum(perimeter_dual(m) * m.vertices)
    exact_polygon = 2 * n * np.sin(np.pi / n)
    assert p == pytest.approx(exact_polygon, rel=1e-12)
    assert abs(p - 2 * np.pi) < 25.0 / n ** 2


def test_translation_invariance(small_bend, small_state, small_adjoint):
    b = shape_derivative_functional(small_bend, small_state, small_adjoint,
                                    eparams=ErosionParams(c1=1e-3))
    scale = np.abs(b).max()
    assert np.abs(b.sum(axis=0)).max() < 1e-12 * scale


def test_linearity_in_V(small_bend, small_state, small_adjoint, rng):
    V1 = random_admissible_field(small_bend, 1)
    V2 = random_admissible_field(small_bend, 2)
    a, c = 0.7, -1.3
    d = [shape_derivative(small_bend, small_state, small_adjoint, V) for V in (V1, V2, a * V1 + c * V2)]
    assert d[2] == pytest.approx(a * d[0] + c * d[1], rel=1e-12)


def test_parts_sum_to_total(small_bend, small_state, small_adjoint):
    ep = ErosionParams(c1=1e-3)
    parts = shape_derivative_parts(small_bend, small_state, small_adjoint, ep)
    assert set(parts.blocks) == set(VOLUME_BLOCKS)
    total = shape_derivative_functional(small_bend, small_state, small_adjoint, eparams=ep)
    assert np.allclose(parts.total(), total)
    flipped = parts.total({"div_fluid": -1.0})
    assert np.allclose(total - flipped, 2 * parts.blocks["div_fluid"])
    only = shape_derivative_functional(small_bend, small_state, small_adjoint, eparams=ep,
                                       terms=("erosion",))
    assert np.allclose(only, parts.erosion)
    assert set(ALL_TERMS) == {"erosion", "willmore", "volume", "stabilization"}


def test_mesh_mismatch_is_rejected(small_state, small_adjoint):
    with pytest.raises(ShapeError):
        shape_derivative_functional(rectangle_mesh(3, 3), small_state, small_adjoint)


def _willmore_fd(m, c1, V, h=1e-6):
    return (willmore_energy(m.with_vertices(m.vertices + h * V), c1)
            - willmore_energy(m.with_vertices(m.vertices - h * V), c1)) / (2 * h)


def test_discrete_willmore_dual_is_exact(small_bend):
    V = random_admissible_field(small_bend, 5)
    assert np.sum(willmore_dual(small_bend, 0.3) * V) == pytest.approx(
        _willmore_fd(small_bend, 0.3, V), rel=1e-7)


def test_continuous_willmore_converges_on_circle():
    errs = []
    for n in (32, 64, 128):
        m = disk_mesh(n)
        V = m.vertices * (1 + 0.3 * np.sin(3 * np.arctan2(m.vertices[:, 1], m.vertices[:, 0])))[:, None]
        exact = np.sum(willmore_dual(m, 1.0) * V)
        errs.append(abs(np.sum(willmore_continuous_dual(m, 1.0) * V) - exact))
    assert errs[-1] < errs[0]


def test_random_field_is_admissible(coarse_bend):
    V = random_admissible_field(coarse_bend, 0, amplitude=0.5)
    assert np.abs(V).max() == pytest.approx(0.5)
    assert not V[coarse_bend.fixed_vertices].any()
    assert np.array_equal(restrict(coarse_bend, V), V)


def test_taylor_harness_on_cell_volumes():
    m = rectangle_mesh(6, 6)
    V = random_admissible_field(m, 3)

    def J(mesh):
        return float(np.sum(mesh.volumes ** 2))

    div = transformation_derivatives(m, V).detJ_prime
    rep = taylor_test(J, m, V, float(np.sum(2 * m.volumes ** 2 * div)))
    assert rep.slope == pytest.approx(2.0, abs=0.05)
    wrong = rep.with_derivative(rep.dJ * 1.1)
    assert wrong.slope == pytest.approx(1.0, abs=0.1)
    assert fit_slope(np.array([1.0, 0.5]), np.array([4.0, 1.0])) == pytest.approx(2.0)


def test_taylor_on_coarse_bend(coarse_bend, params):
    setup = TaylorSetup.build(coarse_bend, params)
    rep = setup.taylor(random_admissible_field(coarse_bend, 1))
    assert rep.passed, rep.slope
