import numpy as np
import pytest

from planar_mvs.config import PipelineConfig
from planar_mvs.dataset import SceneDataset, load_depth_map, load_normal_map, save_scene
from planar_mvs.errors import ValidationError
from planar_mvs.evaluate import depth_metrics, parse_report
from planar_mvs.fusion import read_ply
from planar_mvs.pipeline import resize_dataset, run_pipeline

FAST = dict(t_photo=2, t_pphoto=1, t_geo=1, geo_rounds=1)


@pytest.fixture(scope="module")
def result(small_scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    calls = []
    res = run_pipeline(small_scene, PipelineConfig(**FAST), out_dir=out, progress=lambda *a: calls.append(a))
    return res, out, calls


def test_stages_and_progress(result, small_scene):
    res, _, calls = result
    assert list(res.stages) == ["photo", "p-photo", "geo1"]
    assert {c[0] for c in calls} == {"photo", "p-photo", "geo1"}
    assert len(res.maps) == len(small_scene)
    assert all(p is not None for p in res.priors)
    for key in ("load", "photo", "prior", "p-photo", "geo", "fusion", "total"):
        assert res.timings[key] >= 0


def test_outputs_written(result, small_scene):
    res, out, _ = result
    for name, m in zip(small_scene.names, res.maps):
        assert load_depth_map(out / "depth" / f"{name}.dmap").values.shape == m.depth.shape
        assert load_normal_map(out / "normal" / f"{name}.nmap").values.shape == m.normal.shape
    assert len(read_ply(out / "fused.ply")) == len(res.cloud)
    assert parse_report((out / "timing.txt").read_text())["fused_points"] == len(res.cloud)
    assert (out / "config.txt").exists()


def test_final_maps_stay_in_range(result, small_scene):
    res, _, _ = result
    for m, (dmin, dmax) in zip(res.maps, small_scene.depth_ranges):
        assert dmin <= m.depth.min() and m.depth.max() <= dmax
        assert np.isfinite(m.cost).all()
    gt = small_scene.gt_depth[0].values
    assert depth_metrics(res.maps[0].depth, gt, (0.01,), relative=True).fractions[0] > 0.3


def test_flat_scene_falls_back_to_photometric(small_scene):
    flat = [np.full_like(im, 0.5) for im in small_scene.images]
    ds = SceneDataset(flat, small_scene.cameras, small_scene.depth_ranges, names=small_scene.names)
    res = run_pipeline(ds, PipelineConfig(t_photo=1, use_geom=False), do_fuse=False)
    assert all(p is None for p in res.priors)
    assert len(res.warnings) == len(ds)
    assert res.maps[0].depth.tobytes() == res.stages["photo"][0].depth.tobytes()


def test_zero_photometric_iterations_rejected():
    with pytest.raises(ValidationError):
        PipelineConfig(t_photo=0)


def test_resize_scales_intrinsics(small_scene):
    ds = resize_dataset(small_scene, 48)
    c0, c1 = small_scene.cameras[0], ds.cameras[0]
    assert ds.images[0].shape == (36, 48)
    assert c1.fx == pytest.approx(c0.fx * 0.5)
    assert ds.gt_depth[0].values.shape == (36, 48)
    assert resize_dataset(small_scene, 0) is small_scene
