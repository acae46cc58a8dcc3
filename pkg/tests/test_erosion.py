import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eroopt.erosion import (ErosionParams, angle_factor, auto_c1, cost_functional,
                            erosion_rate, erosion_sensitivities, erosion_state_gradient,
                            impact_angle, willmore_energy)
from eroopt.mesh import disk_mesh

P = ErosionParams()
finite = st.floats(-3.0, 3.0, allow_nan=False)


def test_param_validation():
    with pytest.raises(ValueError):
        ErosionParams(m=0)
    with pytest.raises(ValueError):
        ErosionParams(c1=-1)


@given(ux=finite, uy=finite, a=st.floats(0.01, 2.0))
def test_rate_matches_angle_form(ux, uy, a):
    u = np.array([ux, uy])
    n = np.array([0.0, 1.0])
    p = ErosionParams(eps_n=0.0)
    speed = np.linalg.norm(u)
    if u @ n <= 0:
        assert erosion_rate(a, u, n, p) == 0.0
        return
    if speed < 1e-6:
        return
    gamma = impact_angle(u, n)
    ref = a * (u @ n) * speed ** p.m * angle_factor(gamma, p)
    assert erosion_rate(a, u, n, p) == pytest.approx(ref, rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(ux=finite, uy=finite, nx=finite, ny=finite, a=st.floats(0.0, 2.0))
def test_sensitivities_match_finite_differences(ux, uy, nx, ny, a):
    u = np.array([ux, uy])
    n = np.array([nx, ny])
    if np.linalg.norm(u) < 0.05 or np.linalg.norm(n) < 0.05:
        return
    n = n / np.linalg.norm(n)
    un = u @ n
    # stay clear of the smoothstep kinks, s = 0 and the clip at s = 1
    s = un / np.linalg.norm(u)
    if min(abs(un - P.eps_n), abs(un + P.eps_n), abs(un)) < 1e-3 or s > 1 - 1e-3:
        return

    def g(a_, u_, n_):
        return 0.5 * erosion_rate(a_, u_, n_, P) ** 2

    ga, gu, gn = erosion_sensitivities(a, u, n, P)
    h = 1e-6
    scale = max(1.0, abs(g(a, u, n)))
    assert ga == pytest.approx((g(a + h, u, n) - g(a - h, u, n)) / (2 * h), abs=1e-5 * scale)
    for k in range(2):
        e = np.eye(2)[k] * h
        assert gu[k] == pytest.approx((g(a, u + e, n) - g(a, u - e, n)) / (2 * h), abs=1e-5 * scale)
        assert gn[k] == pytest.approx((g(a, u, n + e) - g(a, u, n - e)) / (2 * h), abs=1e-5 * scale)


def test_orthogonal_impact_is_regular():
    n = np.array([0.0, 1.0])
    ga, gu, gn = erosion_sensitivities(1.0, np.array([0.0, 2.0]), n, P)
    assert np.all(np.isfinite(gu)) and np.all(np.isfinite(gn))
    assert erosion_rate(1.0, np.array([0.0, 2.0]), n, P) > 0


def test_zero_velocity_sensitivities_raise():
    with pytest.raises(ValueError):
        erosion_sensitivities(1.0, np.zeros(2), np.array([0.0, 1.0]), P)


def test_state_gradient_matches_fd(small_bend, small_state):
    mesh, s = small_bend, small_state
    da, du = erosion_state_gradient(mesh, s.alpha, s.u_p, P)
    rng = np.random.default_rng(2)
    dA = rng.standard_normal(mesh.n_vertices)
    dU = rng.standard_normal(s.u_p.shape)
    h = 1e-6

    def J(t):
        st_ = type(s)(s.u_f, s.p, s.u_p + t * dU, s.alpha + t * dA, s.partition, s.params)
        return cost_functional(mesh, st_, P).erosion

    assert np.sum(da * dA) + np.sum(du * dU) == pytest.approx((J(h) - J(-h)) / (2 * h), rel=1e-6)


def test_willmore_of_circle():
    m = disk_mesh(64)
    # h = 1, perimeter 2 pi: energy c1 * pi
    assert willmore_energy(m, 2.0) == pytest.approx(2 * np.pi, rel=1e-2)
    assert willmore_energy(m, 0.0) == 0.0


def test_auto_c1_balances_terms(coarse_bend, coarse_state, coarse_eparams):
    terms = cost_functional(coarse_bend, coarse_state, coarse_eparams)
    assert terms.willmore == pytest.approx(0.01 * terms.erosion)
    assert auto_c1(coarse_bend, coarse_state, P, factor=0.0).c1 == 0.0
