import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planar_mvs import _kernels as K
from planar_mvs.errors import InvalidArgumentError, UnreliablePixelError
from planar_mvs.geometry import PlaneHypothesis, reprojection_error
from planar_mvs.geomcons import GeomContext, aggregate_geo, c_geo
from planar_mvs.patchmatch import EngineParams, make_view_context
from planar_mvs.photometric import c_photo


def test_aggregate_examples():
    assert aggregate_geo([1.0], [0.3], [10.0]) == pytest.approx(0.8)
    assert aggregate_geo([1.0], [0.4], [0.5]) == pytest.approx(0.45)
    assert aggregate_geo([1.0, 1.0], [0.3, 0.4], [math.inf, 0.5]) == pytest.approx((0.8 + 0.45) / 2)
    assert aggregate_geo([1.0, 0.0], [0.3, 2.0], [0.0, math.inf]) == pytest.approx(0.3)
    with pytest.raises(UnreliablePixelError):
        aggregate_geo([0.0, 0.0], [0.1, 0.1], [0.0, 0.0])


def test_context_validation():
    with pytest.raises(InvalidArgumentError):
        GeomContext([np.ones((2, 2))], lambda_geo=-1)
    with pytest.raises(InvalidArgumentError):
        GeomContext([np.ones((2, 2))], tau_geo=0)
    assert GeomContext([np.ones((2, 2))]).cost_function().phase == "geo"


weights = st.lists(st.floats(0.01, 1), min_size=1, max_size=6)


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_geo_cost_bounds_and_truncation(data):
    w = data.draw(weights)
    n = len(w)
    m = data.draw(st.lists(st.floats(0, 2), min_size=n, max_size=n))
    e = data.draw(st.lists(st.floats(0, 1e6) | st.just(math.inf), min_size=n, max_size=n))
    c = aggregate_geo(w, m, e)
    assert c >= c_photo(w, m) - 1e-12
    assert c <= c_photo(w, m) + 0.1 * 5.0 + 1e-12
    # errors beyond the truncation are indistinguishable
    e2 = [x if x < 5.0 else 5.0 + 100.0 * i for i, x in enumerate(e)]
    assert aggregate_geo(w, m, e2) == pytest.approx(c, rel=1e-12, abs=1e-15)


def test_c_geo_zero_error_at_ground_truth(small_scene):
    ds = small_scene
    gctx = GeomContext([g.values for g in ds.gt_depth[1:]])
    cams = ds.cameras
    d = ds.gt_depth[0].values[36, 48]
    c = c_geo((48, 36), PlaneHypothesis(d, (0, 0, -1)), [1.0, 1.0], [0.2, 0.2], gctx, cams[0], cams[1:])
    assert c == pytest.approx(0.2, abs=1e-6)
    with pytest.raises(InvalidArgumentError):
        c_geo((48, 36), PlaneHypothesis(d, (0, 0, -1)), [1.0], [0.2], gctx, cams[0], cams[1:2])


def test_kernel_reprojection_matches_reference(small_scene):
    ds = small_scene
    ctx = make_view_context(ds.images, ds.cameras, 0, ds.depth_ranges[0])
    rng = np.random.default_rng(0)
    gt = [g.values.astype(np.float64) for g in ds.gt_depth]
    checked = 0
    for _ in range(200):
        x, y = int(rng.integers(0, 96)), int(rng.integers(0, 72))
        d = gt[0][y, x] * rng.uniform(0.9, 1.1)
        ray = np.empty(3)
        K._ray(ctx.Kinv, float(x), float(y), ray)
        for k, j in enumerate(ctx.src_indices):
            got = K.reproj_error(
                d, ray, float(x), float(y), ctx.K_ref, ctx.Ks[k], ctx.Ksinv[k], ctx.Rrel[k], ctx.trel[k],
                gt[j], ctx.src_w[k], ctx.src_h[k],
            )
            want = reprojection_error(PlaneHypothesis(d, (0, 0, -1)), (x, y), ds.cameras[0], ds.cameras[j], gt[j])
            if math.isinf(want):
                assert math.isinf(got)
            else:
                assert got == pytest.approx(want, rel=1e-9, abs=1e-9)
                checked += 1
    assert checked > 100


def test_kernel_weighted_cost_matches_aggregate():
    rng = np.random.default_rng(1)
    p = EngineParams().vector((1.0, 3.0))
    for _ in range(100):
        S = int(rng.integers(1, 6))
        w = rng.uniform(0.01, 1, S)
        m = rng.uniform(0, 2, S)
        e = rng.uniform(0, 12, S)
        got = K._weighted_cost(K.MODE_GEO, w, m, e, 2.0, np.array([0, 0, -1.0]), False, 0.0, np.zeros(3), p)
        assert got == pytest.approx(aggregate_geo(w, m, e), rel=1e-12)
