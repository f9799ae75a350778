import numpy as np
import pytest

from planar_mvs import _kernels as K
from planar_mvs.errors import InvalidArgumentError
from planar_mvs.patchmatch import (
    CostFunction,
    EngineParams,
    HypothesisMap,
    checkerboard_neighbors,
    derive_stream,
    make_view_context,
    process_pixels,
    random_init,
    recompute_costs,
    refine_pixel,
    run_phase,
    set_workers,
    sweep,
    update_pixel,
)


@pytest.fixture(scope="module")
def ctx(small_scene):
    ds = small_scene
    return make_view_context(ds.images, ds.cameras, 0, ds.depth_ranges[0])


@pytest.fixture(scope="module")
def init_map(ctx):
    return random_init(ctx, CostFunction("photo"), seed=7)


def _rays(ctx):
    h, w = ctx.shape
    v, u = np.mgrid[0:h, 0:w]
    pix = np.stack([u, v, np.ones_like(u)], axis=-1).astype(float)
    return pix @ ctx.Kinv.T


def test_random_init_ranges_and_facing(ctx, init_map):
    dmin, dmax = ctx.depth_range
    assert init_map.depth.min() >= dmin and init_map.depth.max() <= dmax
    np.testing.assert_allclose(np.linalg.norm(init_map.normal, axis=2), 1.0, atol=1e-12)
    assert (np.einsum("hwc,hwc->hw", init_map.normal, _rays(ctx)) < 0).all()
    assert (init_map.cost >= 0).all() and (init_map.cost <= 2).all()


def test_random_init_deterministic(ctx, init_map):
    again = random_init(ctx, CostFunction("photo"), seed=7)
    assert again.depth.tobytes() == init_map.depth.tobytes()
    other = random_init(ctx, CostFunction("photo"), seed=8)
    assert other.depth.tobytes() != init_map.depth.tobytes()


def test_derive_stream_distinct():
    ids = {int(derive_stream(0, v, p, i, c)) for v in range(3) for p in range(3) for i in range(3) for c in range(2)}
    assert len(ids) == 54
    assert derive_stream(1, 2, 3) == derive_stream(1, 2, 3)


def test_region_offsets_address_opposite_color():
    assert len(K.REGION_STARTS) == 9
    assert ((K.REGION_OFFSETS.sum(axis=1) % 2) != 0).all()
    far = K.REGION_OFFSETS[K.REGION_STARTS[4]:]
    assert sorted(set(np.abs(far).max(axis=1).tolist())) == list(range(3, 24, 2))


def _cost_map(cost):
    h, w = cost.shape
    return HypothesisMap(np.ones((h, w)), np.zeros((h, w, 3)), np.asarray(cost, float), np.ones((h, w, 1), np.uint8))


def test_checkerboard_neighbors_interior_and_edges():
    rng = np.random.default_rng(0)
    hm = _cost_map(rng.random((60, 60)))
    nb = checkerboard_neighbors((30, 30), hm)
    assert len(nb) == 8
    assert all((x + y) % 2 != 0 for x, y in nb)
    # the first near region holds (30,29),(29,28),(31,28); its argmin must be chosen
    cand = [(30, 29), (29, 28), (31, 28)]
    assert nb[0] == min(cand, key=lambda p: hm.cost[p[1], p[0]])
    assert len(checkerboard_neighbors((0, 0), hm)) == 4
    assert checkerboard_neighbors((0, 0), _cost_map(np.zeros((1, 1)))) == []


def test_update_keeps_current_on_tie(ctx, init_map):
    hm = init_map.copy()
    # every neighbor carries the same plane as the center: all candidates tie
    hm.depth[:] = 1.3
    hm.normal[:] = (0, 0, -1)
    recompute_costs(hm, ctx, CostFunction("photo"))
    theta, c, idx = update_pixel((40, 30), hm, ctx, CostFunction("photo"))
    assert idx == 0
    assert theta.depth == 1.3
    assert hm.depth[30, 40] == 1.3


def test_update_never_increases_own_choice(ctx, init_map):
    cf = CostFunction("photo")
    for x, y in [(10, 10), (40, 30), (90, 70)]:
        theta, c_upd, idx = update_pixel((x, y), init_map, ctx, cf)
        th2, c_ref = refine_pixel((x, y), _with(init_map, x, y, theta, c_upd), ctx, cf, stream=np.uint64(5))
        assert c_ref <= c_upd


def _with(hm, x, y, theta, c):
    out = hm.copy()
    out.depth[y, x] = theta.depth
    out.normal[y, x] = theta.normal
    out.cost[y, x] = c
    return out


def test_zero_iterations_is_identity(ctx, init_map):
    out = run_phase(init_map, ctx, CostFunction("photo"), 0)
    assert out.depth.tobytes() == init_map.depth.tobytes()
    with pytest.raises(InvalidArgumentError):
        run_phase(init_map, ctx, CostFunction("photo"), -1)


def test_phase_lowers_mean_cost(ctx, init_map):
    seen = []
    out = run_phase(init_map, ctx, CostFunction("photo"), 2, seed=7, progress=lambda *a: seen.append(a))
    assert [s[0] for s in seen] == [0, 1]
    assert out.cost.mean() < init_map.cost.mean()
    assert init_map.cost.mean() == pytest.approx(random_init(ctx, CostFunction("photo"), seed=7).cost.mean())


def test_same_color_order_independence(ctx, init_map):
    cf = CostFunction("photo")
    stream = np.uint64(99)
    a = init_map.copy()
    sweep(a, ctx, cf, 0, 0, stream)
    h, w = ctx.shape
    pixels = [(x, y) for y in range(h) for x in range(w) if (x + y) % 2 == 0]
    rng = np.random.default_rng(0)
    b = init_map.copy()
    process_pixels([pixels[i] for i in rng.permutation(len(pixels))], b, ctx, cf, stream=stream)
    assert a.depth.tobytes() == b.depth.tobytes()
    assert a.normal.tobytes() == b.normal.tobytes()
    assert a.cost.tobytes() == b.cost.tobytes()


def test_thread_count_does_not_change_results(ctx, init_map):
    cf = CostFunction("photo")
    outs = []
    for n in (1, 4):
        set_workers(n)
        outs.append(run_phase(init_map, ctx, cf, 1, seed=3))
    set_workers(1)
    assert outs[0].depth.tobytes() == outs[1].depth.tobytes()
    assert outs[0].normal.tobytes() == outs[1].normal.tobytes()


def test_engine_params_vector():
    p = EngineParams().vector((1.0, 3.0), iteration=2)
    assert p[K.P_LAMBDA_D] == pytest.approx(2 / 64)
    assert p[K.P_LAMBDA_N] == pytest.approx(np.radians(5))
    assert p[K.P_DEPTH_PERTURB] == pytest.approx(0.05 / 4)


def test_cost_function_validation(ctx):
    with pytest.raises(InvalidArgumentError):
        CostFunction("nope")
    with pytest.raises(InvalidArgumentError):
        CostFunction("geo")
    with pytest.raises(InvalidArgumentError):
        CostFunction("geo", src_depths=[np.ones((72, 96))]).arrays(ctx)


def test_photo_phase_recovers_textured_plane():
    from planar_mvs.dataset import PlaneSpec, SceneSpec, cross_rig, render_synthetic_scene
    from planar_mvs.evaluate import depth_metrics

    n = np.array([np.sin(np.radians(20)), 0.0, -np.cos(np.radians(20))])
    spec = SceneSpec(planes=[PlaneSpec(point=(0, 0, 3.5), normal=n, texel=0.03)], poses=cross_rig(5),
                     width=128, height=96, fx=120, fy=120)
    ds = render_synthetic_scene(spec, seed=0)
    ctx = make_view_context(ds.images, ds.cameras, 0, ds.depth_ranges[0])
    cf = CostFunction("photo")
    out = run_phase(random_init(ctx, cf, seed=0), ctx, cf, 3, seed=0)
    assert depth_metrics(out.depth, ds.gt_depth[0].values, (0.01,), relative=True).fractions[0] >= 0.95
