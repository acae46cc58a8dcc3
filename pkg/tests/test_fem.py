import numpy as np
import pytest
import scipy.sparse as sp

from eroopt.fem import (FormError, apply_dirichlet, assemble_form, boundary_mass, cell_rule,
                        is_symmetric, merge_constraints)
from eroopt.mesh import Tag, rectangle_mesh


@pytest.fixture(scope="module")
def mesh():
    return rectangle_mesh(6, 5, 2.0, 1.0)


def test_quadrature_integrates_quadratics():
    lam, w = cell_rule(2)
    assert w.sum() == pytest.approx(1.0)
    # int over reference simplex of lam0*lam1 = 1/12 of the area
    assert np.sum(w * lam[:, 0] * lam[:, 1]) == pytest.approx(1 / 12)
    assert np.sum(w * lam[:, 0] ** 2) == pytest.approx(1 / 6)


def test_mass_matrix_total(mesh):
    M, _ = assemble_form(mesh, "mass")
    assert M.sum() == pytest.approx(2.0)
    assert is_symmetric(M)


def test_stiffness_annihilates_constants(mesh):
    A, _ = assemble_form(mesh, "a")
    assert np.abs(A @ np.ones(mesh.n_vertices)).max() < 1e-12
    x = mesh.vertices[:, 0]
    assert x @ A @ x == pytest.approx(2.0)  # int |grad x|^2


def test_divergence_form_of_linear_field(mesh):
    B, _ = assemble_form(mesh, "b")
    u = np.column_stack([mesh.vertices[:, 0], np.zeros(mesh.n_vertices)])
    # int q div u with div u = 1 and q = 1
    assert np.ones(mesh.n_vertices) @ B @ u.ravel() == pytest.approx(2.0)


def test_gravity_load(mesh):
    _, g = assemble_form(mesh, "g", {}, gdir=(0.0, -1.0))
    g = g.reshape(-1, 2)
    assert g[:, 1].sum() == pytest.approx(-2.0)
    assert g[:, 0].sum() == pytest.approx(0.0)


def test_boundary_mass_measures_inflow(mesh):
    M = boundary_mass(mesh, mesh.facets_with(Tag.INFLOW))
    assert M.sum() == pytest.approx(1.0)


def test_unknown_form_and_missing_coefficient(mesh):
    with pytest.raises(FormError):
        assemble_form(mesh, "zz")
    with pytest.raises(FormError):
        assemble_form(mesh, "c", {})


def test_merge_constraints_rejects_conflicts():
    assert merge_constraints([(1, 2.0), (1, 2.0), (3, 0.0)]) == {1: 2.0, 3: 0.0}
    with pytest.raises(ValueError):
        merge_constraints([(1, 2.0), (1, 3.0)])


@pytest.mark.parametrize("symmetric", [True, False])
def test_dirichlet_solution(mesh, symmetric):
    A, _ = assemble_form(mesh, "a")
    b = np.zeros(mesh.n_vertices)
    x = mesh.vertices[:, 0]
    bnd = mesh.boundary_vertices
    A2, b2 = apply_dirichlet(A, b, zip(bnd, x[bnd]), symmetric=symmetric)
    sol = sp.linalg.spsolve(A2.tocsc(), b2)
    assert np.allclose(sol, x)  # harmonic and linear
    assert is_symmetric(A2) == symmetric
