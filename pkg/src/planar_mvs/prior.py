"""Piecewise planar priors from triangulated credible correspondences."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, QhullError

from . import _kernels
from .errors import InsufficientSupportError
from .geometry import CameraModel, PlaneHypothesis, normal_angle

MIN_TRIANGLE_AREA = 1e-9


@dataclass
class CredibleSet:
    """Credible pixels of one reference image, sorted by (y, x)."""

    pixels: np.ndarray  # (N, 2) int, columns x, y
    depths: np.ndarray  # (N,)
    normals: np.ndarray  # (N, 3)
    costs: np.ndarray  # (N,)

    def __len__(self) -> int:
        return len(self.pixels)


@dataclass
class Triangulation:
    points: np.ndarray  # (N, 2) float pixel coordinates
    triangles: np.ndarray  # (T, 3) int, counterclockwise (positive signed area)


@dataclass
class PriorModel:
    """Per-pixel prior planes; ``depth == 0`` where no prior exists."""

    depth: np.ndarray  # (H, W)
    normal: np.ndarray  # (H, W, 3)
    owner: np.ndarray  # (H, W) triangle index or -1

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0

    def at(self, x: int, y: int) -> tuple[float, np.ndarray] | None:
        if self.depth[y, x] <= 0:
            return None
        return float(self.depth[y, x]), self.normal[y, x].copy()

    @classmethod
    def empty(cls, height: int, width: int) -> "PriorModel":
        return cls(
            np.zeros((height, width)),
            np.zeros((height, width, 3)),
            np.full((height, width), -1, dtype=np.int64),
        )


def select_credible(hyp_map, eps: float = 0.1, cap_density: bool = True) -> CredibleSet:
    """Pixels whose final aggregated cost is below ``eps``.

    When more than one pixel in four qualifies, only the cheapest pixel of
    each 2x2 cell is kept.
    """
    cost = np.asarray(hyp_map.cost)
    depth = np.asarray(hyp_map.depth)
    mask = (cost < eps) & (depth > 0)
    if cap_density and mask.sum() * 4 > mask.size:
        h, w = mask.shape
        masked = np.where(mask, cost, np.inf)
        hp, wp = (h + 1) // 2 * 2, (w + 1) // 2 * 2
        padded = np.full((hp, wp), np.inf)
        padded[:h, :w] = masked
        cells = padded.reshape(hp // 2, 2, wp // 2, 2).transpose(0, 2, 1, 3).reshape(hp // 2, wp // 2, 4)
        # argmin picks the first minimum in (dy, dx) scan order
        best = cells.argmin(axis=2)
        keep = np.zeros((hp, wp), dtype=bool)
        cy, cx = np.nonzero(np.isfinite(cells.min(axis=2)))
        keep[2 * cy + best[cy, cx] // 2, 2 * cx + best[cy, cx] % 2] = True
        mask = keep[:h, :w]
    ys, xs = np.nonzero(mask)  # row-major: sorted by (y, x)
    if len(xs) < 3:
        raise InsufficientSupportError(f"only {len(xs)} credible pixels (need 3)")
    return CredibleSet(
        pixels=np.stack([xs, ys], axis=1).astype(np.int64),
        depths=depth[ys, xs].astype(np.float64),
        normals=np.asarray(hyp_map.normal)[ys, xs].astype(np.float64),
        costs=cost[ys, xs].astype(np.float64),
    )


def _signed_area2(p: np.ndarray, tris: np.ndarray) -> np.ndarray:
    a, b, c = p[tris[:, 0]], p[tris[:, 1]], p[tris[:, 2]]
    return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])


def delaunay_triangulate(points) -> Triangulation:
    """Delaunay triangulation of 2-D points (canonically sorted by y, then x).

    The returned ``points`` are the sorted, de-duplicated input; triangles
    index into them and have positive signed area.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts):
        order = np.lexsort((pts[:, 0], pts[:, 1]))
        pts = pts[order]
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.any(np.diff(pts, axis=0) != 0, axis=1)
        pts = pts[keep]
    if len(pts) < 3:
        raise InsufficientSupportError(f"{len(pts)} distinct points cannot be triangulated")
    d = pts - pts[0]
    if not np.any(d[:, 0] * d[1, 1] - d[:, 1] * d[1, 0] != 0):
        raise InsufficientSupportError("all points are collinear")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise InsufficientSupportError(f"triangulation failed: {exc}") from exc
    simplices = tri.simplices.astype(np.int64)
    area2 = _signed_area2(pts, simplices)
    flip = area2 < 0
    simplices[flip] = simplices[flip][:, [0, 2, 1]]
    simplices = simplices[np.abs(area2) > 2 * MIN_TRIANGLE_AREA]
    if len(simplices) == 0:
        raise InsufficientSupportError("all points are collinear")
    # deterministic triangle order: by sorted vertex triple
    key = np.sort(simplices, axis=1)
    simplices = simplices[np.lexsort((key[:, 2], key[:, 1], key[:, 0]))]
    return Triangulation(points=pts, triangles=simplices)


def rasterize(tri: Triangulation, height: int, width: int, skip=None) -> tuple[np.ndarray, np.ndarray]:
    """Owner triangle per pixel center (-1 outside) and the pass-1 claim counts."""
    owner = np.full((height, width), -1, dtype=np.int64)
    hits = np.zeros((height, width), dtype=np.int64)
    if skip is None:
        skip = np.zeros(len(tri.triangles), dtype=np.bool_)
    _kernels.rasterize_triangles(
        np.ascontiguousarray(tri.points, dtype=np.float64),
        np.ascontiguousarray(tri.triangles, dtype=np.int64),
        np.ascontiguousarray(skip, dtype=np.bool_),
        height,
        width,
        owner,
        hits,
    )
    return owner, hits


def triangle_vertex_depths(tri: Triangulation, credible: CredibleSet) -> np.ndarray:
    """(T, 3) vertex depths looked up from the credible set."""
    lut = {(int(x), int(y)): d for (x, y), d in zip(credible.pixels, credible.depths)}
    depth_of = np.array([lut[(int(x), int(y))] for x, y in tri.points])
    return depth_of[tri.triangles]


def corrupt_triangles(vertex_depths: np.ndarray, fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Scale the vertex depths of a random ``fraction`` of triangles by 0.75-0.9 or 1.1-1.25.

    Returns the corrupted (T, 3) depths and the indices of the touched triangles.
    """
    rng = np.random.default_rng(seed)
    T = len(vertex_depths)
    n_bad = int(round(fraction * T))
    bad = np.sort(rng.choice(T, size=n_bad, replace=False)) if n_bad else np.zeros(0, dtype=np.int64)
    out = np.array(vertex_depths, dtype=np.float64, copy=True)
    mag = rng.uniform(0.1, 0.25, size=(n_bad, 3))
    sign = rng.choice([-1.0, 1.0], size=(n_bad, 3))
    out[bad] *= 1.0 + sign * mag
    return out, bad


def build_prior_model(
    tri: Triangulation,
    vertex_depths: np.ndarray,
    cam: CameraModel,
    depth_range: tuple[float, float],
) -> PriorModel:
    """Fit one plane per triangle and rasterize it into per-pixel priors.

    ``vertex_depths`` holds the (T, 3) depths of each triangle's corners;
    triangles whose 3-D corners are degenerate carry no prior.
    """
    h, w = cam.height, cam.width
    rays = np.column_stack(
        [(tri.points[:, 0] - cam.cx) / cam.fx, (tri.points[:, 1] - cam.cy) / cam.fy, np.ones(len(tri.points))]
    )
    # vectorised plane_from_points over all triangles
    verts = rays[tri.triangles] * vertex_depths[..., None]  # (T, 3, 3)
    cross = np.cross(verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0])
    norm = np.linalg.norm(cross, axis=1)
    skip = 0.5 * norm < 1e-12
    normals = cross / np.where(skip, 1.0, norm)[:, None]
    centroid = verts.mean(axis=1)
    flip = np.einsum("ij,ij->i", normals, centroid) > 0
    normals[flip] *= -1.0
    dists = -np.einsum("tkj,tj->t", verts, normals) / 3.0
    skip |= dists <= 0
    owner, _ = rasterize(tri, h, w, skip)
    model = PriorModel.empty(h, w)
    ys, xs = np.nonzero(owner >= 0)
    t_idx = owner[ys, xs]
    ray_x = (xs - cam.cx) / cam.fx
    ray_y = (ys - cam.cy) / cam.fy
    n = normals[t_idx]
    denom = n[:, 0] * ray_x + n[:, 1] * ray_y + n[:, 2]
    ok = denom < -1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(ok, -dists[t_idx] / denom, 0.0)
    d = np.where(ok, np.clip(d, depth_range[0], depth_range[1]), 0.0)
    model.depth[ys, xs] = d
    model.normal[ys[ok], xs[ok]] = n[ok]
    model.owner[ys[ok], xs[ok]] = t_idx[ok]
    return model


def build_prior(
    hyp_map,
    cam: CameraModel,
    depth_range: tuple[float, float],
    eps: float = 0.1,
    corrupt_fraction: float = 0.0,
    seed: int = 0,
) -> tuple[PriorModel, Triangulation, CredibleSet]:
    credible = select_credible(hyp_map, eps)
    tri = delaunay_triangulate(credible.pixels)
    vd = triangle_vertex_depths(tri, credible)
    if corrupt_fraction > 0:
        vd, _ = corrupt_triangles(vd, corrupt_fraction, seed)
    return build_prior_model(tri, vd, cam, depth_range), tri, credible


def prior_probability(
    theta: PlaneHypothesis,
    prior: tuple[float, np.ndarray],
    gamma: float = 0.5,
    lambda_d: float = 1.0,
    lambda_n: float = math.radians(5.0),
) -> float:
    """``gamma + exp(-(d - d_p)^2 / (2 lambda_d)) * exp(-angle(n, n_p)^2 / (2 lambda_n))``."""
    d_p, n_p = prior
    ang = normal_angle(theta.normal, n_p)
    dd = theta.depth - d_p
    return gamma + math.exp(-dd * dd / (2.0 * lambda_d)) * math.exp(-ang * ang / (2.0 * lambda_n))


def c_p_photo(
    theta: PlaneHypothesis,
    c: float,
    prior: tuple[float, np.ndarray] | None,
    alpha: float = 0.18,
    gamma: float = 0.5,
    lambda_d: float = 1.0,
    lambda_n: float = math.radians(5.0),
) -> float:
    """Prior-assisted cost; pixels without a prior use the constant prior ``1 + gamma``."""
    if prior is None:
        return c * c / alpha - math.log(1.0 + gamma)
    return c * c / alpha - math.log(prior_probability(theta, prior, gamma, lambda_d, lambda_n))


def lambda_d_for(depth_range: tuple[float, float], divisor: float = 64.0) -> float:
    return (depth_range[1] - depth_range[0]) / divisor


def save_triangulation(tri: Triangulation, path, vertex_depths: np.ndarray | None = None) -> None:
    """OFF-style dump: header, vertex/triangle counts, ``x y depth`` rows, ``3 a b c`` rows."""
    z = np.zeros(len(tri.points))
    if vertex_depths is not None:
        z[tri.triangles.ravel()] = np.asarray(vertex_depths).ravel()
    lines = ["OFF", f"{len(tri.points)} {len(tri.triangles)} 0"]
    lines += [f"{x:.17g} {y:.17g} {d:.17g}" for (x, y), d in zip(tri.points, z)]
    lines += [f"3 {a} {b} {c}" for a, b, c in tri.triangles]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def load_triangulation(path) -> Triangulation:
    rows = Path(path).read_text().split("\n")
    nv, nt, _ = (int(v) for v in rows[1].split())
    pts = np.array([[float(v) for v in r.split()[:2]] for r in rows[2 : 2 + nv]])
    tris = np.array([[int(v) for v in r.split()[1:4]] for r in rows[2 + nv : 2 + nv + nt]], dtype=np.int64)
    return Triangulation(pts, tris.reshape(-1, 3))
