"""PatchMatch engine: random initialization, red-black propagation, refinement.

The heavy lifting happens in compiled kernels; this module packages the
per-view inputs, exposes single-pixel entry points for testing and runs
whole phases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba
import numpy as np

from . import _kernels as K
from .errors import InvalidArgumentError
from .geometry import CameraModel, PlaneHypothesis, relative_pose
from .photometric import PatchSpec
from .prior import PriorModel

PHASES = {"photo": K.MODE_PHOTO, "p-photo": K.MODE_PRIOR, "geo": K.MODE_GEO}
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class EngineParams:
    sigma: float = 0.3
    eta: float = 0.9
    alpha: float = 0.18
    gamma: float = 0.5
    lambda_n_deg: float = 5.0
    lambda_d_divisor: float = 64.0
    lambda_geo: float = 0.1
    tau_geo: float = 5.0
    top_k: int = 4
    depth_perturb: float = 0.05
    normal_perturb_deg: float = 30.0
    patch: PatchSpec = PatchSpec()

    def vector(self, depth_range: tuple[float, float], iteration: int = 0) -> np.ndarray:
        dmin, dmax = depth_range
        p = np.zeros(K.N_PARAMS)
        p[K.P_DMIN] = dmin
        p[K.P_DMAX] = dmax
        p[K.P_SIGMA] = self.sigma
        p[K.P_ETA] = self.eta
        p[K.P_ALPHA] = self.alpha
        p[K.P_GAMMA] = self.gamma
        p[K.P_LAMBDA_D] = (dmax - dmin) / self.lambda_d_divisor
        # the angular bandwidth is used in radians, unsquared
        p[K.P_LAMBDA_N] = math.radians(self.lambda_n_deg)
        p[K.P_LAMBDA_GEO] = self.lambda_geo
        p[K.P_TAU_GEO] = self.tau_geo
        p[K.P_TOPK] = self.top_k
        scale = 0.5**iteration
        p[K.P_DEPTH_PERTURB] = self.depth_perturb * scale
        p[K.P_NORMAL_PERTURB] = math.radians(self.normal_perturb_deg) * scale
        return p


@dataclass
class HypothesisMap:
    depth: np.ndarray  # (H, W) z-depth
    normal: np.ndarray  # (H, W, 3) camera-frame unit normals
    cost: np.ndarray  # (H, W) cost under the active phase
    vis: np.ndarray  # (H, W, S) uint8 visibility per source

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def hypothesis(self, x: int, y: int) -> PlaneHypothesis:
        return PlaneHypothesis(self.depth[y, x], self.normal[y, x].copy())

    def copy(self) -> "HypothesisMap":
        return HypothesisMap(self.depth.copy(), self.normal.copy(), self.cost.copy(), self.vis.copy())


@dataclass
class ViewContext:
    """Everything the kernels need about one reference view and its sources."""

    ref: np.ndarray
    srcs: np.ndarray  # (S, Hmax, Wmax), zero padded
    src_w: np.ndarray
    src_h: np.ndarray
    M1: np.ndarray  # K_s R_rel K_r^-1 per source
    vK: np.ndarray  # K_s t_rel per source
    Kinv: np.ndarray
    K_ref: np.ndarray
    Ks: np.ndarray
    Ksinv: np.ndarray
    Rrel: np.ndarray
    trel: np.ndarray
    offsets: np.ndarray
    depth_range: tuple[float, float]
    ref_index: int = 0
    src_indices: tuple[int, ...] = ()

    @property
    def n_sources(self) -> int:
        return self.srcs.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.ref.shape


def _stack(arrays: Sequence[np.ndarray]) -> np.ndarray:
    hmax = max(a.shape[0] for a in arrays)
    wmax = max(a.shape[1] for a in arrays)
    out = np.zeros((len(arrays), hmax, wmax))
    for i, a in enumerate(arrays):
        out[i, : a.shape[0], : a.shape[1]] = a
    return out


def make_view_context(
    images: Sequence[np.ndarray],
    cameras: Sequence[CameraModel],
    ref_index: int,
    depth_range: tuple[float, float],
    src_indices: Optional[Sequence[int]] = None,
    patch: PatchSpec = PatchSpec(),
) -> ViewContext:
    if src_indices is None:
        src_indices = [j for j in range(len(images)) if j != ref_index]
    src_indices = tuple(int(j) for j in src_indices)
    if not src_indices:
        raise InvalidArgumentError("at least one source view is required")
    if ref_index in src_indices:
        raise InvalidArgumentError("the reference view cannot be its own source")
    cr = cameras[ref_index]
    M1, vK, Ks, Ksinv, Rr, tr = [], [], [], [], [], []
    for j in src_indices:
        cs = cameras[j]
        R_rel, t_rel = relative_pose(cr, cs)
        M1.append(cs.K @ R_rel @ cr.K_inv)
        vK.append(cs.K @ t_rel)
        Ks.append(cs.K)
        Ksinv.append(cs.K_inv)
        Rr.append(R_rel)
        tr.append(t_rel)
    return ViewContext(
        ref=np.ascontiguousarray(images[ref_index], dtype=np.float64),
        srcs=_stack([np.asarray(images[j], dtype=np.float64) for j in src_indices]),
        src_w=np.array([cameras[j].width for j in src_indices], dtype=np.int64),
        src_h=np.array([cameras[j].height for j in src_indices], dtype=np.int64),
        M1=np.array(M1),
        vK=np.array(vK),
        Kinv=cr.K_inv.copy(),
        K_ref=cr.K.copy(),
        Ks=np.array(Ks),
        Ksinv=np.array(Ksinv),
        Rrel=np.array(Rr),
        trel=np.array(tr),
        offsets=patch.offsets().astype(np.int64),
        depth_range=(float(depth_range[0]), float(depth_range[1])),
        ref_index=int(ref_index),
        src_indices=src_indices,
    )


@dataclass
class CostFunction:
    """Which aggregated cost drives the update, plus the inputs it needs.

    ``prior`` is used by the ``p-photo`` phase, ``src_depths`` (one depth map
    per source view, in the context's source order) by the ``geo`` phase.
    """

    phase: str = "photo"
    prior: Optional[PriorModel] = None
    src_depths: Optional[Sequence[np.ndarray]] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.phase not in PHASES:
            raise InvalidArgumentError(f"unknown phase {self.phase!r}")
        if self.phase == "geo" and self.src_depths is None:
            raise InvalidArgumentError("the geometric phase needs source depth maps")

    @property
    def mode(self) -> int:
        return PHASES[self.phase]

    def arrays(self, ctx: ViewContext):
        """(src_depths, prior_depth, prior_normal) arrays shaped for the kernels."""
        key = id(ctx)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is ctx:
            return hit[1]
        h, w = ctx.shape
        if self.phase == "geo":
            if len(self.src_depths) != ctx.n_sources:
                raise InvalidArgumentError("need one depth map per source view")
            sd = _stack([np.asarray(d, dtype=np.float64) for d in self.src_depths])
        else:
            sd = np.zeros((ctx.n_sources, 1, 1))
        if self.phase == "p-photo" and self.prior is not None:
            if self.prior.depth.shape != (h, w):
                raise InvalidArgumentError("prior size differs from the reference image")
            pd = np.ascontiguousarray(self.prior.depth, dtype=np.float64)
            pn = np.ascontiguousarray(self.prior.normal, dtype=np.float64)
        else:
            pd = np.zeros((h, w))
            pn = np.zeros((h, w, 3))
        self._cache[key] = (ctx, (sd, pd, pn))
        return sd, pd, pn


def derive_stream(seed: int, *parts: int) -> np.uint64:
    """Independent 64-bit random stream id for ``(seed, view, phase, iteration, ...)``."""
    z = int(seed) & _MASK64
    for p in parts:
        z = _splitmix(z ^ _splitmix((int(p) + 0x632BE59BD9B4E019) & _MASK64))
    return np.uint64(z)


def _splitmix(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def set_workers(n: int) -> int:
    """Set the number of kernel threads; returns the value actually used."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def _kargs(hmap: HypothesisMap, ctx: ViewContext, cost_fn: CostFunction):
    sd, pd, pn = cost_fn.arrays(ctx)
    return (
        hmap.depth, hmap.normal, hmap.cost, hmap.vis, ctx.ref, ctx.srcs, ctx.src_w, ctx.src_h,
        ctx.M1, ctx.vK, ctx.Kinv, ctx.K_ref, ctx.Ks, ctx.Ksinv, ctx.Rrel, ctx.trel, sd, pd, pn,
        ctx.offsets,
    )


def recompute_costs(
    hmap: HypothesisMap, ctx: ViewContext, cost_fn: CostFunction, params: EngineParams = EngineParams()
) -> HypothesisMap:
    """Re-score every pixel's hypothesis (top-K mean over sources) under ``cost_fn``."""
    sd, pd, pn = cost_fn.arrays(ctx)
    K.init_costs(
        cost_fn.mode, hmap.depth, hmap.normal, hmap.cost, ctx.ref, ctx.srcs, ctx.src_w, ctx.src_h,
        ctx.M1, ctx.vK, ctx.Kinv, ctx.K_ref, ctx.Ks, ctx.Ksinv, ctx.Rrel, ctx.trel, sd, pd, pn,
        ctx.offsets, params.vector(ctx.depth_range),
    )
    return hmap


def random_init(
    ctx: ViewContext,
    cost_fn: CostFunction,
    seed: int = 0,
    params: EngineParams = EngineParams(),
    stream: Optional[np.uint64] = None,
) -> HypothesisMap:
    """Uniform random depths and camera-facing normals, scored with the top-K cost."""
    h, w = ctx.shape
    if stream is None:
        stream = derive_stream(seed, ctx.ref_index, 0xA11)
    hmap = HypothesisMap(
        depth=np.empty((h, w)),
        normal=np.empty((h, w, 3)),
        cost=np.empty((h, w)),
        vis=np.ones((h, w, ctx.n_sources), dtype=np.uint8),
    )
    K.random_hypotheses(hmap.depth, hmap.normal, ctx.Kinv, params.vector(ctx.depth_range), stream)
    return recompute_costs(hmap, ctx, cost_fn, params)


def sweep(
    hmap: HypothesisMap,
    ctx: ViewContext,
    cost_fn: CostFunction,
    color: int,
    iteration: int,
    stream: np.uint64,
    params: EngineParams = EngineParams(),
    refine: bool = True,
) -> None:
    """Update (and refine) every pixel of one checkerboard color in place."""
    args = _kargs(hmap, ctx, cost_fn)
    K.sweep_color(
        int(color), cost_fn.mode, *args, params.vector(ctx.depth_range, iteration),
        np.uint64(stream), bool(refine),
    )


def run_phase(
    hmap: HypothesisMap,
    ctx: ViewContext,
    cost_fn: CostFunction,
    T: int,
    seed: int = 0,
    params: EngineParams = EngineParams(),
    phase_id: int = 0,
    progress: Optional[Callable[[int, str, float], None]] = None,
) -> HypothesisMap:
    """Run ``T`` red-black iterations on a copy of ``hmap`` and return it."""
    if T < 0:
        raise InvalidArgumentError("iteration count must be non-negative")
    out = hmap.copy()
    for it in range(T):
        for color in (0, 1):
            stream = derive_stream(seed, ctx.ref_index, phase_id, it, color)
            sweep(out, ctx, cost_fn, color, it, stream, params)
        if progress is not None:
            progress(it, cost_fn.phase, float(np.mean(out.cost)))
    return out


# --- single-pixel entry points ---------------------------------------------------

def checkerboard_neighbors(pixel, hmap: HypothesisMap) -> list[tuple[int, int]]:
    """Lowest-cost pixel of each of the 8 sampling regions around ``pixel``.

    Near regions are V-shaped triples, far regions are strips at odd offsets
    3..23; every offset addresses the opposite checkerboard color.
    """
    x, y = int(pixel[0]), int(pixel[1])
    h, w = hmap.cost.shape
    out = []
    for r in range(len(K.REGION_STARTS) - 1):
        best, arg = np.inf, None
        for dx, dy in K.REGION_OFFSETS[K.REGION_STARTS[r] : K.REGION_STARTS[r + 1]]:
            xx, yy = x + int(dx), y + int(dy)
            if 0 <= xx < w and 0 <= yy < h and hmap.cost[yy, xx] < best:
                best, arg = hmap.cost[yy, xx], (xx, yy)
        if arg is not None:
            out.append(arg)
    return out


def process_pixels(
    pixels,
    hmap: HypothesisMap,
    ctx: ViewContext,
    cost_fn: CostFunction,
    params: EngineParams = EngineParams(),
    iteration: int = 0,
    stream: np.uint64 = np.uint64(0),
    update: bool = True,
    refine: bool = True,
) -> np.ndarray:
    """Sequentially process an explicit pixel list in place; returns winning candidate indices."""
    pix = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    return K.process_pixels(
        pix[:, 0].copy(), pix[:, 1].copy(), cost_fn.mode, *_kargs(hmap, ctx, cost_fn),
        params.vector(ctx.depth_range, iteration), np.uint64(stream), bool(update), bool(refine),
    )


def update_pixel(
    pixel, hmap: HypothesisMap, ctx: ViewContext, cost_fn: CostFunction,
    params: EngineParams = EngineParams(),
) -> tuple[PlaneHypothesis, float, int]:
    """Best of the current hypothesis and the propagated candidates, without refinement.

    Returns the winning hypothesis, its cost and its candidate index (0 means
    the current hypothesis was kept). ``hmap`` is not modified.
    """
    work = hmap.copy()
    idx = process_pixels([pixel], work, ctx, cost_fn, params, update=True, refine=False)
    x, y = int(pixel[0]), int(pixel[1])
    return work.hypothesis(x, y), float(work.cost[y, x]), int(idx[0])


def refine_pixel(
    pixel, hmap: HypothesisMap, ctx: ViewContext, cost_fn: CostFunction,
    iteration: int = 0, stream: np.uint64 = np.uint64(0), params: EngineParams = EngineParams(),
) -> tuple[PlaneHypothesis, float]:
    """Try the six perturbed/random variants of the current hypothesis; ``hmap`` is not modified."""
    work = hmap.copy()
    process_pixels([pixel], work, ctx, cost_fn, params, iteration, stream, update=False, refine=True)
    x, y = int(pixel[0]), int(pixel[1])
    return work.hypothesis(x, y), float(work.cost[y, x])
