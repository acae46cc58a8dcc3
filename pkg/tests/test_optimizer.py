import math

import numpy as np
import pytest

from eroopt.erosion import ErosionParams, auto_c1
from eroopt.mesh import max_admissible_step, rectangle_mesh
from eroopt.optimizer import HISTORY_COLUMNS, OptimizerConfig, line_search, run


@pytest.fixture(scope="module")
def toy():
    m = rectangle_mesh(6, 4)
    W = np.zeros((m.n_vertices, 2))
    W[m.deformable_vertices, 1] = np.sign(m.vertices[m.deformable_vertices, 1] - 0.5) * 0.05
    return m, W


def quadratic(m0, W, c):
    target = m0.vertices + c * W

    def evaluate(m):
        return 0.5 * float(np.sum((m.vertices - target) ** 2)), None

    return evaluate


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(t0=0.0)
    with pytest.raises(ValueError):
        OptimizerConfig(c_armijo=1.5)
    with pytest.raises(ValueError):
        OptimizerConfig(max_iter=-1)


def test_line_search_armijo_on_quadratic(toy):
    m, W = toy
    ev = quadratic(m, W, 0.5)
    J0, _ = ev(m)
    slope = 0.5 * float(np.sum(W * W))  # -dJ/dt at t = 0 along W
    cfg = OptimizerConfig()
    ls = line_search(m, -W, J0, slope, cfg, ev)
    assert ls.ok
    assert ls.t <= max_admissible_step(m, W)
    assert ls.J <= J0 - cfg.c_armijo * ls.t * slope
    assert ls.quality.passed


def test_line_search_respects_t0(toy):
    m, W = toy
    ev = quadratic(m, W, 0.5)
    ls = line_search(m, -W, ev(m)[0], 0.5 * np.sum(W * W), OptimizerConfig(t0=0.1), ev)
    assert ls.ok and ls.t == pytest.approx(0.1, rel=1e-9)


def test_zero_direction_fails(toy):
    m, W = toy
    ls = line_search(m, np.zeros_like(W), 1.0, 1.0, OptimizerConfig(), quadratic(m, W, 1.0))
    assert not ls.ok and "descent" in ls.message


def test_failed_solves_are_rejections(toy):
    m, W = toy
    base = quadratic(m, W, 0.5)
    calls = []

    def flaky(mm):
        calls.append(1)
        if len(calls) == 1:
            raise RuntimeError("diverged")
        return base(mm)

    ls = line_search(m, -W, base(m)[0], 0.5 * np.sum(W * W), OptimizerConfig(), flaky)
    assert ls.ok and ls.backtracks >= 1


def test_backtracking_exhausted(toy):
    m, W = toy
    ls = line_search(m, -W, 0.0, 1.0, OptimizerConfig(max_backtracks=3), lambda mm: (1.0, None))
    assert not ls.ok and ls.backtracks == 3


def test_run_zero_iterations(small_bend, small_state, params):
    ep = auto_c1(small_bend, small_state, ErosionParams())
    mesh, hist = run(small_bend, params, ep, OptimizerConfig(max_iter=0))
    assert mesh is small_bend
    assert len(hist) == 1 and hist.records[0].step == 0.0
    assert math.isfinite(hist.records[0].grad_norm)


def test_run_decreases_cost(small_bend, small_state, params):
    ep = auto_c1(small_bend, small_state, ErosionParams())
    mesh, hist = run(small_bend, params, ep, OptimizerConfig(max_iter=2))
    J = hist.column("J")
    assert np.all(np.diff(J) < 0)
    fixed = small_bend.fixed_vertices
    assert np.array_equal(mesh.vertices[fixed], small_bend.vertices[fixed])
    assert np.all(hist.column("tangential_ratio") < 1e-10)
    rows = hist.rows()
    assert len(rows[0]) == len(HISTORY_COLUMNS)
