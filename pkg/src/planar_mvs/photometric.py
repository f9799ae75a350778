"""Photometric matching cost, view selection and the aggregated photometric cost.

These are scalar reference implementations. The PatchMatch engine runs
compiled equivalents (see :mod:`planar_mvs._kernels`) that are tested
against the functions here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, UnreliablePixelError
from .geometry import CameraModel, PlaneHypothesis, homography_from_hypothesis

MAX_COST = 2.0
VAR_EPS = 1e-10
VIS_THRESHOLD = 0.2


@dataclass(frozen=True)
class PatchSpec:
    radius: int = 5
    step: int = 2

    def __post_init__(self):
        if self.radius < 1 or self.step < 1:
            raise InvalidArgumentError("patch radius and step must be >= 1")
        if len(self.offsets()) ** 2 < 9:
            raise InvalidArgumentError("patch must contain at least 9 samples")

    def offsets(self) -> np.ndarray:
        return np.arange(-self.radius, self.radius + 1, self.step, dtype=np.float64)


@dataclass
class ViewWeights:
    w: np.ndarray
    vis: np.ndarray


def bilinear(img: np.ndarray, x: float, y: float) -> float:
    h, w = img.shape
    x0 = min(int(math.floor(x)), w - 2)
    y0 = min(int(math.floor(y)), h - 2)
    ax, ay = x - x0, y - y0
    return (
        img[y0, x0] * (1 - ax) * (1 - ay)
        + img[y0, x0 + 1] * ax * (1 - ay)
        + img[y0 + 1, x0] * (1 - ax) * ay
        + img[y0 + 1, x0 + 1] * ax * ay
    )


def ncc_cost(a: np.ndarray, b: np.ndarray) -> float:
    """``1 - NCC``; the maximal cost when either patch is flat."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.size
    ma, mb = a.mean(), b.mean()
    va = (a * a).sum() / n - ma * ma
    vb = (b * b).sum() / n - mb * mb
    if va < VAR_EPS or vb < VAR_EPS:
        return MAX_COST
    cov = (a * b).sum() / n - ma * mb
    return float(min(MAX_COST, max(0.0, 1.0 - cov / math.sqrt(va * vb))))


def matching_cost(
    pixel,
    theta: PlaneHypothesis,
    ref_img: np.ndarray,
    src_img: np.ndarray,
    cam_ref: CameraModel,
    cam_src: CameraModel,
    spec: PatchSpec = PatchSpec(),
) -> float:
    """Plane-warped NCC cost of the window around ``pixel``.

    Window samples falling outside the reference image are dropped; if any
    warped sample leaves the source image the cost is :data:`MAX_COST`.
    """
    H = homography_from_hypothesis(theta, pixel, cam_ref, cam_src)
    hr, wr = ref_img.shape
    hs, ws = src_img.shape
    px, py = int(round(pixel[0])), int(round(pixel[1]))
    ref_vals, src_vals = [], []
    for oy in spec.offsets():
        for ox in spec.offsets():
            x, y = px + int(ox), py + int(oy)
            if not (0 <= x < wr and 0 <= y < hr):
                continue
            p = H @ np.array([x, y, 1.0])
            if p[2] <= 0:
                return MAX_COST
            sx, sy = p[0] / p[2], p[1] / p[2]
            if not (0.0 <= sx <= ws - 1 and 0.0 <= sy <= hs - 1):
                return MAX_COST
            ref_vals.append(ref_img[y, x])
            src_vals.append(bilinear(src_img, sx, sy))
    if len(ref_vals) < 9:
        return MAX_COST
    return ncc_cost(ref_vals, src_vals)


def init_aggregate(costs, K: int = 4) -> float:
    """Mean of the ``K`` smallest per-source costs."""
    costs = np.sort(np.asarray(costs, dtype=np.float64).ravel())
    if costs.size == 0:
        raise InvalidArgumentError("no source costs to aggregate")
    k = max(1, min(int(K), costs.size))
    return float(costs[:k].mean())


def view_selection(
    costs: np.ndarray,
    neighbor_vis: np.ndarray,
    sigma: float = 0.3,
    eta: float = 0.9,
) -> ViewWeights:
    """Per-source selection weights from candidate costs and neighbor visibility.

    ``costs`` has shape (n_candidates, n_sources); ``neighbor_vis`` has shape
    (n_neighbors, n_sources) holding the neighbors' binary visibility.
    """
    costs = np.atleast_2d(np.asarray(costs, dtype=np.float64))
    neighbor_vis = np.atleast_2d(np.asarray(neighbor_vis))
    like = np.exp(-(costs**2) / (2.0 * sigma**2)).mean(axis=0)
    if neighbor_vis.shape[0] > 0:
        smooth = np.where(neighbor_vis > 0, eta, 1.0 - eta).mean(axis=0)
    else:
        smooth = np.ones(costs.shape[1])
    score = like * smooth
    w = np.zeros_like(score)
    top = score.max()
    if top > 0:
        w = score / top
    else:
        w[int(np.argmax(like))] = 1.0
    return ViewWeights(w=w, vis=(w >= VIS_THRESHOLD).astype(np.uint8))


def c_photo(weights, costs) -> float:
    w = np.asarray(getattr(weights, "w", weights), dtype=np.float64)
    m = np.asarray(costs, dtype=np.float64)
    total = w.sum()
    if not total > 0:
        raise UnreliablePixelError("all view-selection weights are zero")
    return float((w * m).sum() / total)


def likelihood(c: float, alpha: float = 0.18) -> float:
    return math.exp(-(c * c) / alpha)
