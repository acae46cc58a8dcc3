import numpy as np
import pytest

from eroopt.gradient import (GradientConfig, GradientError, LameField, constraint_matrix,
                             elasticity_matrix, free_dofs, gradient_norm,
                             pairing, project_gradient, shape_gradient, solve_lame_extension,
                             tangentiality_ratio, trapezoid_weights)
from eroopt.mesh import disk_mesh, rectangle_mesh
from eroopt.shape import random_admissible_field, restrict


@pytest.fixture(scope="module")
def mesh():
    return rectangle_mesh(12, 6, 2.0, 1.0)


@pytest.fixture(scope="module")
def dJ(mesh):
    rng = np.random.default_rng(7)
    return restrict(mesh, rng.standard_normal((mesh.n_vertices, 2)))


def test_config_validation():
    with pytest.raises(ValueError):
        GradientConfig(mu_min=2.0, mu_max=1.0)
    with pytest.raises(ValueError):
        GradientConfig(saddle="bicg")


def test_lame_field_bounds(mesh):
    lame = solve_lame_extension(mesh)
    assert lame.mu.min() >= 1.0 - 1e-12 and lame.mu.max() <= 10.0 + 1e-12
    assert np.allclose(lame.mu[mesh.deformable_vertices], 10.0)
    const = solve_lame_extension(mesh, 4.0, 4.0)
    assert np.allclose(const.mu, 2.0)


def test_lame_is_linear_across_channel():
    # walls deformable, inflow/outflow fixed: mu* harmonic, so away from the ends
    # it cannot exceed the wall value
    m = rectangle_mesh(20, 8, 4.0, 1.0)
    lame = solve_lame_extension(m, 1.0, 100.0)
    assert np.all(lame.mu_star <= 100.0 + 1e-9)


def test_rigid_motions_in_kernel(mesh):
    A = elasticity_matrix(mesh, LameField(np.ones(mesh.n_vertices), np.ones(mesh.n_vertices)))
    X = mesh.vertices
    for W in (np.tile([1.0, 0.0], (mesh.n_vertices, 1)), np.column_stack([-X[:, 1], X[:, 0]])):
        assert np.abs(A @ W.ravel()).max() < 1e-12
    assert abs(A - A.T).max() < 1e-14


def test_free_dofs_need_fixed_boundary():
    with pytest.raises(GradientError):
        free_dofs(disk_mesh(8))


def test_projection_solves_galerkin_system(mesh, dJ):
    lame = solve_lame_extension(mesh)
    G = project_gradient(mesh, dJ, lame)
    A = elasticity_matrix(mesh, lame)
    T = random_admissible_field(mesh, 2)
    assert pairing(A, G, T) == pytest.approx(float(np.sum(dJ * T)), rel=1e-10)
    assert not G[mesh.fixed_vertices].any()


@pytest.mark.parametrize("saddle", ["minres", "direct"])
def test_correction_removes_normal_component(mesh, dJ, saddle):
    sg = shape_gradient(mesh, dJ, GradientConfig(saddle=saddle))
    assert tangentiality_ratio(mesh, sg.G, sg.Pi) < 1e-10
    N, _ = constraint_matrix(mesh)
    assert np.abs(N @ sg.Pi.ravel()).max() < 1e-10 * np.abs(N @ sg.G.ravel()).max()


def test_solvers_agree(mesh, dJ):
    a = shape_gradient(mesh, dJ, GradientConfig(saddle="minres"))
    b = shape_gradient(mesh, dJ, GradientConfig(saddle="direct"))
    assert np.allclose(a.G_restricted, b.G_restricted, atol=1e-8 * np.abs(b.G_restricted).max())


def test_descent_identity(mesh, dJ):
    sg = shape_gradient(mesh, dJ, GradientConfig(saddle="direct"))
    A = elasticity_matrix(mesh, sg.records["lame"])
    Gr = sg.G_restricted
    assert float(np.sum(dJ * Gr)) == pytest.approx(pairing(A, Gr, Gr), rel=1e-9)
    assert float(np.sum(dJ * Gr)) > 0


def test_pipeline_is_linear(mesh, dJ):
    cfg = GradientConfig(saddle="direct")
    a = shape_gradient(mesh, dJ, cfg)
    b = shape_gradient(mesh, -2.5 * dJ, cfg)
    assert np.allclose(b.G_restricted, -2.5 * a.G_restricted)
    zero = shape_gradient(mesh, np.zeros_like(dJ), cfg)
    assert not zero.G_restricted.any()


def test_norm_of_unit_normal_field():
    m = rectangle_mesh(10, 4, 2.0, 1.0)
    G = np.zeros((m.n_vertices, 2))
    G[m.deformable_vertices, 1] = 1.0
    # |G.n| = 1 on the free deformable vertices of both walls
    w = trapezoid_weights(m)
    assert gradient_norm(G, m) == pytest.approx(np.sqrt(w[m.deformable_vertices].sum()))
    assert w.sum() == pytest.approx(4.0)
