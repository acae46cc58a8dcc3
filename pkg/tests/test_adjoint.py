import numpy as np
import pytest

from eroopt.adjoint import AdjointOrderError, AdjointPipeline, solve_adjoint, transpose_report
from eroopt.erosion import ErosionParams
from eroopt.verify import check_transpose


def test_adjoint_matrices_are_transposes(small_bend, small_state):
    gaps = transpose_report(small_bend, small_state)
    assert set(gaps) >= {"transport", "particle", "flow", "transport_coupling", "drag_coupling"}
    assert max(gaps.values()) <= 1e-10


def test_pipeline_order_is_enforced(small_bend, small_state):
    pipe = AdjointPipeline(small_bend, small_state, ErosionParams())
    with pytest.raises(AdjointOrderError):
        pipe.flow()
    with pytest.raises(AdjointOrderError):
        pipe.result()


def test_adjoint_shapes_and_finiteness(small_bend, small_state):
    z = solve_adjoint(small_bend, small_state, ErosionParams())
    nv = small_bend.n_vertices
    assert z.z_uf.shape == (nv, 2) and z.z_p.shape == (nv,)
    assert z.z_up.shape == (nv, 2) and z.z_alpha.shape == (nv,)
    for arr in (z.z_uf, z.z_p, z.z_up, z.z_alpha):
        assert np.all(np.isfinite(arr))


def test_transpose_check_result():
    res = check_transpose()
    assert res.passed and res.detail["flow_dofs"] == 144
