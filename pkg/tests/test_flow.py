import numpy as np
import pytest

from eroopt.flow import (PhysicalParams, SIInputs, default_inflow, derive_dimensionless,
                         inflow_profile, solve_navier_stokes)
from eroopt.mesh import Tag, rectangle_mesh
from eroopt.verify import poiseuille_error


def test_params_validation():
    with pytest.raises(ValueError):
        PhysicalParams(Re=0)
    with pytest.raises(ValueError):
        PhysicalParams(gdir=(0.0, -2.0))
    with pytest.raises(ValueError):
        derive_dimensionless(SIInputs(d_p=-1.0))


def test_stokes_number_scales_with_diameter_squared():
    p = PhysicalParams()
    a, b = p.with_diameter(5e-6), p.with_diameter(10e-6)
    assert b.Stk / a.Stk == pytest.approx(4.0)
    assert a.Re == p.Re


def test_derived_numbers():
    p = derive_dimensionless()
    assert p.Re == pytest.approx(1.18 * 3.86 * 3.95e-3 / 1.85e-5)
    assert p.Stk == pytest.approx(1.3447, rel=1e-3)
    assert p.De == pytest.approx(p.Re / np.sqrt(p.R0))


def test_inflow_profile_mean_and_peak():
    m = rectangle_mesh(4, 16, 1.0, 1.0)
    prof = default_inflow(m, PhysicalParams())
    assert prof.direction == pytest.approx([1.0, 0.0])
    s = np.linspace(0, 1, 2001)
    pts = prof.origin + s[:, None] * prof.tangent * prof.width
    ux = prof(pts)[:, 0]
    assert ux.max() == pytest.approx(2.0, rel=1e-6)
    assert np.trapezoid(ux, s) == pytest.approx(4 / 3, rel=1e-6)


def test_inflow_requires_inlet():
    m = rectangle_mesh(3, 3, walls=True)
    bad = m.__class__(m.vertices, m.cells, m.facets, np.full(m.n_facets, int(Tag.WALL)),
                      np.zeros(m.n_facets, bool))
    with pytest.raises(ValueError):
        inflow_profile(bad, 1.0)


def test_poiseuille_is_reproduced():
    err, balance, _ = poiseuille_error(8)
    assert err < 0.1
    assert balance < 1e-2


def test_flow_respects_no_slip(small_bend, small_state):
    wall = small_bend.vertices_on(Tag.WALL)
    assert np.abs(small_state.u_f[wall]).max() == 0.0


def test_warm_start_converges_quickly(small_bend, params):
    cold = solve_navier_stokes(small_bend, params)
    warm = solve_navier_stokes(small_bend, params, initial=cold)
    assert len(warm.newton_history) <= 2
    assert np.allclose(warm.u_f, cold.u_f, atol=1e-8)
