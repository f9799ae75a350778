"""Three-phase depth estimation (photometric, prior-assisted, geometric) and fusion."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image

from .config import PipelineConfig
from .dataset import (
    DepthMap,
    SceneDataset,
    atomic_write,
    load_scene,
    save_depth_map,
    save_normal_map,
)
from .errors import InsufficientSupportError, MVSError
from .fusion import PointCloud, fuse, write_ply
from .geometry import CameraModel
from .patchmatch import (
    CostFunction,
    HypothesisMap,
    ViewContext,
    derive_stream,
    make_view_context,
    random_init,
    recompute_costs,
    run_phase,
    set_workers,
)
from .prior import PriorModel, build_prior

log = logging.getLogger(__name__)

PHASE_PHOTO = 1
PHASE_PRIOR = 2
PHASE_GEO = 3

Progress = Callable[[str, int, int, float], None]  # (phase, view, iteration, mean cost)


@dataclass
class PipelineResult:
    dataset: SceneDataset
    maps: list[HypothesisMap]
    stages: dict[str, list[HypothesisMap]] = field(default_factory=dict)
    priors: list[Optional[PriorModel]] = field(default_factory=list)
    cloud: Optional[PointCloud] = None
    timings: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def depths(self) -> list[np.ndarray]:
        return [m.depth for m in self.maps]

    @property
    def normals(self) -> list[np.ndarray]:
        return [m.normal for m in self.maps]


class StageError(MVSError):
    """A module error annotated with the pipeline stage it came from."""


# --- resizing --------------------------------------------------------------------------

def _resize_float(img: np.ndarray, w: int, h: int, resample) -> np.ndarray:
    return np.asarray(Image.fromarray(np.asarray(img, dtype=np.float32), mode="F").resize((w, h), resample), dtype=np.float64)


def resize_dataset(ds: SceneDataset, max_dim: int) -> SceneDataset:
    """Downscale every view so its longer side is at most ``max_dim`` pixels."""
    if max_dim <= 0:
        return ds
    images, cams, colors, gts, masks = [], [], [], [], []
    for i, (img, cam) in enumerate(zip(ds.images, ds.cameras)):
        h, w = img.shape
        f = min(1.0, max_dim / max(h, w))
        nw, nh = max(2, int(round(w * f))), max(2, int(round(h * f)))
        if (nw, nh) == (w, h):
            images.append(img)
            cams.append(cam)
            colors.append(None if ds.colors is None else ds.colors[i])
            gts.append(None if ds.gt_depth is None else ds.gt_depth[i])
            masks.append(None if ds.lowtex_masks is None else ds.lowtex_masks[i])
            continue
        images.append(np.clip(_resize_float(img, nw, nh, Image.BICUBIC), 0.0, 1.0))
        cams.append(_scaled(cam, nw / w, nh / h, nw, nh))
        if ds.colors is not None:
            colors.append(np.asarray(Image.fromarray(ds.colors[i]).resize((nw, nh), Image.BICUBIC)))
        if ds.gt_depth is not None:
            gts.append(DepthMap(_resize_float(ds.gt_depth[i].values, nw, nh, Image.NEAREST)))
        if ds.lowtex_masks is not None:
            masks.append(_resize_float(ds.lowtex_masks[i].astype(np.float32), nw, nh, Image.NEAREST) > 0.5)
    return SceneDataset(
        images=images,
        cameras=cams,
        depth_ranges=list(ds.depth_ranges),
        gt_depth=gts if ds.gt_depth is not None else None,
        colors=colors if ds.colors is not None else None,
        lowtex_masks=masks if ds.lowtex_masks is not None else None,
        names=list(ds.names),
    )


def _scaled(cam: CameraModel, sx: float, sy: float, w: int, h: int) -> CameraModel:
    # pixel-center aligned rescaling of the intrinsics
    return CameraModel(cam.fx * sx, cam.fy * sy, (cam.cx + 0.5) * sx - 0.5, (cam.cy + 0.5) * sy - 0.5, cam.R, cam.t, w, h)


# --- phases ----------------------------------------------------------------------------

def _contexts(ds: SceneDataset, cfg: PipelineConfig) -> list[ViewContext]:
    patch = cfg.engine_params().patch
    return [
        make_view_context(ds.images, ds.cameras, i, ds.depth_ranges[i], patch=patch)
        for i in range(len(ds))
    ]


def _progress_for(progress: Optional[Progress], phase: str, view: int):
    if progress is None:
        return None
    return lambda it, _phase, mean: progress(phase, view, it, mean)


def estimate_depthmaps(
    ds: SceneDataset,
    cfg: PipelineConfig = PipelineConfig(),
    progress: Optional[Progress] = None,
    keep_stages: bool = True,
) -> PipelineResult:
    """Run the photometric, prior-assisted and geometric phases on every view."""
    set_workers(cfg.threads)
    params = cfg.engine_params()
    ctxs = _contexts(ds, cfg)
    n = len(ds)
    res = PipelineResult(dataset=ds, maps=[], priors=[None] * n)
    timings = res.timings

    # phase 1: photometric consistency from a random start
    t0 = time.perf_counter()
    photo = CostFunction("photo")
    maps = []
    for i, ctx in enumerate(ctxs):
        init = random_init(ctx, photo, params=params, stream=derive_stream(cfg.seed, i, 0xA11, PHASE_PHOTO))
        maps.append(run_phase(init, ctx, photo, cfg.t_photo, cfg.seed, params, PHASE_PHOTO,
                              _progress_for(progress, "photo", i)))
    timings["photo"] = time.perf_counter() - t0
    if keep_stages:
        res.stages["photo"] = [m.copy() for m in maps]

    # phase 2: planar priors from credible pixels, then prior-assisted matching
    if cfg.use_prior:
        t0 = time.perf_counter()
        for i, m in enumerate(maps):
            try:
                prior, _, _ = build_prior(
                    m, ds.cameras[i], ds.depth_ranges[i], cfg.eps,
                    corrupt_fraction=cfg.prior_corruption, seed=cfg.seed + i,
                )
                res.priors[i] = prior
            except InsufficientSupportError as exc:
                msg = f"view {ds.names[i]}: no planar prior ({exc}); keeping the photometric estimate"
                log.warning(msg)
                res.warnings.append(msg)
        timings["prior"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        for i, ctx in enumerate(ctxs):
            if res.priors[i] is None:
                continue
            cf = CostFunction("p-photo", prior=res.priors[i])
            init = random_init(ctx, cf, params=params, stream=derive_stream(cfg.seed, i, 0xA11, PHASE_PRIOR))
            maps[i] = run_phase(init, ctx, cf, cfg.t_pphoto, cfg.seed, params, PHASE_PRIOR,
                                _progress_for(progress, "p-photo", i))
        timings["p-photo"] = time.perf_counter() - t0
        if keep_stages:
            res.stages["p-photo"] = [m.copy() for m in maps]

    # phase 3: geometric consistency, each round reading the previous round's maps
    if cfg.use_geom:
        t0 = time.perf_counter()
        for r in range(cfg.geo_rounds):
            prev = [m.depth.copy() for m in maps]
            new_maps = []
            for i, ctx in enumerate(ctxs):
                cf = CostFunction("geo", src_depths=[prev[j] for j in ctx.src_indices])
                start = recompute_costs(maps[i].copy(), ctx, cf, params)
                new_maps.append(run_phase(start, ctx, cf, cfg.t_geo, cfg.seed, params, PHASE_GEO + r,
                                          _progress_for(progress, f"geo{r + 1}", i)))
            maps = new_maps
            if keep_stages:
                res.stages[f"geo{r + 1}"] = [m.copy() for m in maps]
        timings["geo"] = time.perf_counter() - t0

    res.maps = maps
    return res


def run_pipeline(
    scene,
    cfg: PipelineConfig = PipelineConfig(),
    out_dir=None,
    progress: Optional[Progress] = None,
    do_fuse: bool = True,
    keep_stages: bool = True,
) -> PipelineResult:
    """Load (or take) a scene, estimate all depth maps, fuse, and optionally write outputs."""
    t_start = time.perf_counter()
    t0 = t_start
    ds = scene if isinstance(scene, SceneDataset) else load_scene(scene)
    ds = resize_dataset(ds, cfg.max_dim)
    t_load = time.perf_counter() - t0
    try:
        res = estimate_depthmaps(ds, cfg, progress, keep_stages)
    except MVSError as exc:
        raise StageError(f"depth estimation: {exc}") from exc
    res.timings = {"load": t_load, **res.timings}
    if do_fuse:
        t0 = time.perf_counter()
        try:
            res.cloud = fuse(res.depths, res.normals, ds.cameras, cfg.fusion_params(), ds.colors)
        except MVSError as exc:
            raise StageError(f"fusion: {exc}") from exc
        res.timings["fusion"] = time.perf_counter() - t0
    res.timings["total"] = time.perf_counter() - t_start
    if out_dir is not None:
        write_outputs(res, out_dir, cfg)
    return res


def write_outputs(res: PipelineResult, out_dir, cfg: Optional[PipelineConfig] = None) -> None:
    """depth/NAME.dmap, normal/NAME.nmap, fused.ply, timing.txt/json and config.txt."""
    from .evaluate import write_report

    out = Path(out_dir)
    for name, m in zip(res.dataset.names, res.maps):
        save_depth_map(m.depth, out / "depth" / f"{name}.dmap")
        save_normal_map(m.normal, out / "normal" / f"{name}.nmap")
    if res.cloud is not None:
        write_ply(res.cloud, out / "fused.ply")
    timing = {f"time_{k}_s": float(v) for k, v in res.timings.items()}
    if res.cloud is not None:
        timing["fused_points"] = len(res.cloud)
    write_report(timing, out / "timing")
    if cfg is not None:
        atomic_write(out / "config.txt", cfg.to_text().encode())
    if res.warnings:
        atomic_write(out / "warnings.txt", ("\n".join(res.warnings) + "\n").encode())
