"""The compiled kernels and the NumPy fallback must agree on every entry point."""

import numpy as np
import pytest

from compoundeye import kernels
from compoundeye.stereo import PATHS_8, SgbmParams, StereoPipeline, WlsParams
from compoundeye.synthgen import SceneSpec, render_compound_frame

try:
    C = kernels.get_backend("cython")
except ImportError:  # extension not built
    C = None
P = kernels.get_backend("numpy")

needs_ext = pytest.mark.skipif(C is None, reason="compiled kernels not built")


def test_backend_flag():
    assert kernels.BACKEND in ("cython", "numpy")
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def _census_pair(rng, h=24, w=40):
    a = rng.uniform(0, 255, size=(h, w)).astype(np.float32)
    b = np.roll(a, 5, axis=1) + rng.normal(0, 3, size=(h, w)).astype(np.float32)
    return a, np.ascontiguousarray(b, dtype=np.float32)


@needs_ext
def test_census_transform_equal(rng):
    a, _ = _census_pair(rng)
    a[3:6, 4:9] = 100.0  # ties
    assert np.array_equal(C.census_transform(a, 5, 5), P.census_transform(a, 5, 5))


@needs_ext
@pytest.mark.parametrize("r", [0, 1, 2])
def test_cost_volume_equal(rng, r):
    a, b = _census_pair(rng)
    ca, cb = P.census_transform(a, 5, 5), P.census_transform(b, 5, 5)
    assert np.array_equal(np.asarray(C.census_cost_volume(ca, cb, 2, 12, r)), P.census_cost_volume(ca, cb, 2, 12, r))


@needs_ext
@pytest.mark.parametrize("paths", [PATHS_8[:4], PATHS_8])
def test_sgm_equal(rng, paths):
    cost = rng.integers(0, 200, size=(13, 17, 9)).astype(np.uint16)
    dirs = np.ascontiguousarray(paths, dtype=np.int32)
    assert np.array_equal(np.asarray(C.sgm_aggregate(cost, 8, 96, dirs)), P.sgm_aggregate(cost, 8, 96, dirs))


@needs_ext
@pytest.mark.parametrize("u", [0.0, 0.1, 0.4])
def test_select_equal(rng, u):
    agg = rng.integers(0, 500, size=(11, 30, 8)).astype(np.int32)
    agg[2, 5, :] = 7  # flat curve: uniqueness fails
    for name in ("select_left", "select_right"):
        dc, oc = getattr(C, name)(agg, u, 3)
        dp, op = getattr(P, name)(agg, u, 3)
        assert np.array_equal(np.asarray(oc), op), name
        assert np.allclose(np.asarray(dc), dp, atol=1e-12), name


@needs_ext
def test_fgs_equal_and_non_mutating(rng):
    stack = rng.normal(size=(2, 9, 14))
    wx = rng.uniform(0, 1, size=(9, 13))
    wy = rng.uniform(0, 1, size=(8, 14))
    lams = np.array([4.0, 1.0, 0.25])
    before = stack.copy()
    out_c = np.asarray(C.fgs_smooth(stack, wx, wy, lams))
    assert np.array_equal(stack, before)
    out_p = P.fgs_smooth(stack, wx, wy, lams)
    assert np.array_equal(stack, before)
    assert np.allclose(out_c, out_p, rtol=1e-12, atol=1e-12)


@needs_ext
def test_zero_masked_costs_equal(rng):
    cost = rng.integers(1, 50, size=(6, 20, 5)).astype(np.uint16)
    lm = (rng.random((6, 20)) < 0.2).astype(np.uint8)
    rm = (rng.random((6, 20)) < 0.2).astype(np.uint8)
    a = np.asarray(C.zero_masked_costs(cost.copy(), lm, rm, 4))
    b = P.zero_masked_costs(cost.copy(), lm, rm, 4)
    assert np.array_equal(a, b)
    assert (a == 0).any()


@needs_ext
def test_full_pipeline_equal(monkeypatch, layout):
    frame, _ = render_compound_frame(layout, SceneSpec(target_distance_mm=25.0))
    pipe = StereoPipeline(layout, "left", SgbmParams(), WlsParams())
    with monkeypatch.context() as m:
        for name in ("census_transform", "census_cost_volume", "sgm_aggregate", "select_left", "select_right",
                     "fgs_smooth", "zero_masked_costs"):
            m.setattr(kernels, name, getattr(C, name))
        dc = pipe.run(frame)
    with monkeypatch.context() as m:
        for name in ("census_transform", "census_cost_volume", "sgm_aggregate", "select_left", "select_right",
                     "fgs_smooth", "zero_masked_costs"):
            m.setattr(kernels, name, getattr(P, name))
        dp = pipe.run(frame)
    assert np.array_equal(dc.flags, dp.flags)
    assert np.allclose(dc.depth, dp.depth, rtol=1e-9, equal_nan=True)
