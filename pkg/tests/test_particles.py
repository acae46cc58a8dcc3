import warnings

import numpy as np
import pytest

from eroopt.erosion import impact_rate
from eroopt.mesh import Tag
from eroopt.particles import (RampConfig, classify_boundary, drag_coefficient, particle_reynolds,
                              transport_dirichlet)


def test_ramp_levels_end_at_target():
    lv = RampConfig().levels(1e4)
    assert lv[0] == 1e-2 and lv[-1] == pytest.approx(1e-4)
    assert all(a > b for a, b in zip(lv, lv[1:]))
    assert RampConfig(floor=1e-3).levels(1e4)[-1] == 1e-3


def test_particle_reynolds_warns_outside_validity(params):
    uf = np.zeros((1, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        particle_reynolds(uf, np.array([[1e-3, 0.0]]), params)
    with pytest.warns(RuntimeWarning):
        particle_reynolds(uf, np.array([[1e6, 0.0]]), params)
    assert drag_coefficient(uf, uf, params)[0] == pytest.approx(1.0, abs=1e-6)


def test_inflow_partition(small_bend, small_state):
    part = classify_boundary(small_bend, small_state.u_p)
    inflow = small_bend.facets_with(Tag.INFLOW)
    outflow = small_bend.facets_with(Tag.OUTFLOW)
    assert part.minus[inflow].all()
    assert part.plus[outflow].all()
    assert part == small_state.partition


def test_transport_dirichlet_prioritises_inlet(small_bend, small_state):
    dofs, vals = transport_dirichlet(small_bend, small_state.partition, 1.0)
    inlet = small_bend.vertices_on(Tag.INFLOW)
    assert np.all(vals[np.isin(dofs, inlet)] == 1.0)
    assert len(np.unique(dofs)) == len(dofs)


def test_alpha_matches_inlet_and_eta_in_range(small_bend, small_state):
    inlet = small_bend.vertices_on(Tag.INFLOW)
    assert np.allclose(small_state.alpha[inlet], 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        eta = impact_rate(small_bend, small_state)
    assert 0.0 <= eta <= 1.05


def test_particles_follow_inlet_velocity(small_bend, small_state):
    inlet = small_bend.vertices_on(Tag.INFLOW)
    assert np.allclose(small_state.u_p[inlet], small_state.u_f[inlet])
