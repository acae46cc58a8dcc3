import numpy as np
import pytest

from eroopt.residuals import (FlowOperator, ParticleOperator, TransportOperator, cs_jacobian,
                              drag_factor)
from eroopt.verify import default_params


def fd_columns(res, x, idx, h=1e-7):
    out = []
    for j in idx:
        e = np.zeros_like(x)
        e[j] = h
        out.append((res(x + e) - res(x - e)) / (2 * h))
    return np.stack(out, axis=1)


def test_cs_jacobian_of_polynomial():
    x = np.array([[1.0, 2.0], [-0.5, 3.0]])
    J = cs_jacobian(lambda z: np.stack([z[:, 0] ** 2 * z[:, 1], np.sin(z[:, 1])], axis=1), x)
    exact = np.array([[[2 * 1 * 2, 1], [0, np.cos(2.0)]], [[2 * -0.5 * 3, 0.25], [0, np.cos(3.0)]]])
    assert np.allclose(J, exact, atol=1e-14)


def test_drag_factor_limits():
    assert drag_factor(np.zeros((1, 2)), 100.0)[0] == pytest.approx(1.0, abs=1e-6)
    rel = np.array([[3.0, 4.0]])
    assert drag_factor(rel, 2.0)[0] == pytest.approx(1 + 0.15 * 10 ** 0.687)


@pytest.fixture(scope="module")
def setup(small_bend, small_state):
    return small_bend, small_state, small_state.coeffs


@pytest.mark.parametrize("parts", ["all", "galerkin", "stab"])
def test_flow_jacobian_matches_fd(setup, parts):
    mesh, st, c = setup
    op = FlowOperator(mesh, c)
    x = st.flow_vector + 0.01 * np.random.default_rng(0).standard_normal(op.n)
    idx = np.arange(0, op.n, 13)
    J = op.jacobian(x, parts).toarray()[:, idx]
    assert np.allclose(J, fd_columns(lambda y: op.residual(y, parts), x, idx), atol=1e-6)


def test_galerkin_plus_stab_is_all(setup):
    mesh, st, c = setup
    op = FlowOperator(mesh, c)
    x = st.flow_vector
    assert np.allclose(op.residual(x, "galerkin") + op.residual(x, "stab"), op.residual(x, "all"))
    with pytest.raises(ValueError):
        op.residual(x, "bogus")


def test_particle_and_transport_jacobians(setup):
    mesh, st, c = setup
    pop = ParticleOperator(mesh, c, st.u_f)
    x = st.u_p.ravel()
    idx = np.arange(0, pop.n, 11)
    assert np.allclose(pop.jacobian(x).toarray()[:, idx], fd_columns(pop.residual, x, idx), atol=1e-6)
    top = TransportOperator(mesh, c, st.u_p)
    a = st.alpha
    idx = np.arange(0, top.n, 7)
    assert np.allclose(top.jacobian(a).toarray()[:, idx], fd_columns(top.residual, a, idx),
                       atol=1e-5 * max(1, np.abs(top.jacobian(a)).max()))


def test_forward_residuals_vanish_at_solution(setup):
    mesh, st, c = setup
    from eroopt.flow import flow_dirichlet
    from eroopt.particles import particle_dirichlet
    op = FlowOperator(mesh, c)
    r = op.residual(st.flow_vector)
    dofs, _ = flow_dirichlet(mesh, st.inflow)
    r[dofs] = 0
    assert np.abs(r).max() < 1e-8
    pop = ParticleOperator(mesh, c, st.u_f)
    r = pop.residual(st.u_p.ravel())
    dofs, _ = particle_dirichlet(mesh, st.u_f)
    r[dofs] = 0
    assert np.abs(r).max() < 1e-8


def test_coordinate_pairing_matches_fd(setup):
    mesh, st, c = setup
    rng = np.random.default_rng(3)
    z = rng.standard_normal(mesh.n_vertices)
    V = rng.standard_normal((mesh.n_vertices, 2))
    V[mesh.boundary_vertices] = 0
    b = TransportOperator(mesh, c, st.u_p).coordinate_pairing(st.alpha, z, parts="all")
    h = 1e-6

    def val(t):
        m = mesh.with_vertices(mesh.vertices + t * V)
        return z @ TransportOperator(m, c, st.u_p).residual(st.alpha)

    assert np.sum(b * V) == pytest.approx((val(h) - val(-h)) / (2 * h), rel=1e-6)
