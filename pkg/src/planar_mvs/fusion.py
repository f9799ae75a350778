"""Depth-map fusion into a deduplicated point cloud, and binary PLY I/O."""
from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .errors import FormatError, InvalidArgumentError, ValidationError
from .geometry import CameraModel, pixel_rays, relative_pose


@dataclass(frozen=True)
class FusionParams:
    max_rel_depth_diff: float = 0.01
    max_normal_diff_deg: float = 10.0
    max_reproj_err: float = 2.0
    min_consistent: int = 2

    def __post_init__(self):
        if not (
            self.max_rel_depth_diff > 0
            and self.max_normal_diff_deg > 0
            and self.max_reproj_err > 0
            and self.min_consistent > 0
        ):
            raise InvalidArgumentError("fusion thresholds must be positive")


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) world coordinates
    normals: np.ndarray  # (N, 3) unit, world coordinates
    colors: Optional[np.ndarray] = None  # (N, 3) uint8

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(self.points) != len(self.normals):
            raise ValidationError("points and normals differ in length")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise ValidationError("colors and points differ in length")
        if not (np.isfinite(self.points).all() and np.isfinite(self.normals).all()):
            raise ValidationError("point cloud contains non-finite values")

    def __len__(self) -> int:
        return len(self.points)


def is_consistent(rel_depth: float, angle_deg: float, reproj: float, params: FusionParams = FusionParams()) -> bool:
    """All three differences strictly below their thresholds."""
    return (
        rel_depth < params.max_rel_depth_diff
        and angle_deg < params.max_normal_diff_deg
        and reproj < params.max_reproj_err
    )


def consistency_terms(
    pixel,
    ref_index: int,
    src_index: int,
    depths: Sequence[np.ndarray],
    normals: Sequence[np.ndarray],
    cams: Sequence[CameraModel],
) -> Optional[tuple[float, float, float]]:
    """(relative depth difference, normal angle in degrees, reprojection error in px).

    The reference estimate is carried into the source camera and compared with
    the source estimate at the nearest landing pixel. ``None`` when the
    projection leaves the source image or either estimate is invalid.
    """
    x, y = int(pixel[0]), int(pixel[1])
    cr, cs = cams[ref_index], cams[src_index]
    d = float(depths[ref_index][y, x])
    if d <= 0:
        return None
    R_rel, t_rel = relative_pose(cr, cs)
    X = d * np.array([(x - cr.cx) / cr.fx, (y - cr.cy) / cr.fy, 1.0])
    Y = R_rel @ X + t_rel
    if Y[2] <= 0:
        return None
    u = cs.fx * Y[0] / Y[2] + cs.cx
    v = cs.fy * Y[1] / Y[2] + cs.cy
    qx, qy = int(math.floor(u + 0.5)), int(math.floor(v + 0.5))
    if not (0 <= qx < cs.width and 0 <= qy < cs.height):
        return None
    ds = float(depths[src_index][qy, qx])
    if ds <= 0:
        return None
    rel = abs(Y[2] - ds) / ds
    n_proj = R_rel @ normals[ref_index][y, x]
    c = float(np.clip(np.dot(n_proj, normals[src_index][qy, qx]), -1.0, 1.0))
    ang = math.degrees(math.acos(c))
    Z = ds * np.array([(qx - cs.cx) / cs.fx, (qy - cs.cy) / cs.fy, 1.0])
    W = R_rel.T @ (Z - t_rel)
    if W[2] <= 0:
        return rel, ang, math.inf
    bx = cr.fx * W[0] / W[2] + cr.cx
    by = cr.fy * W[1] / W[2] + cr.cy
    return rel, ang, math.hypot(bx - x, by - y)


def check_consistency(
    pixel,
    ref_index: int,
    src_index: int,
    depths: Sequence[np.ndarray],
    normals: Sequence[np.ndarray],
    cams: Sequence[CameraModel],
    params: FusionParams = FusionParams(),
) -> bool:
    terms = consistency_terms(pixel, ref_index, src_index, depths, normals, cams)
    return terms is not None and is_consistent(*terms, params)


def consistency_arrays(ref_index, src_index, depths, normals, cams, params: FusionParams = FusionParams()):
    """Vectorised consistency of every reference pixel against one source.

    Returns ``(ok, landing)`` where ``landing`` is the flat source pixel index
    (-1 when the projection misses).
    """
    cr, cs = cams[ref_index], cams[src_index]
    d = np.asarray(depths[ref_index], dtype=np.float64)
    R_rel, t_rel = relative_pose(cr, cs)
    rays = pixel_rays(cr)
    X = rays * d[..., None]
    Y = X @ R_rel.T + t_rel
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cs.fx * Y[..., 0] / Y[..., 2] + cs.cx
        v = cs.fy * Y[..., 1] / Y[..., 2] + cs.cy
        qx = np.floor(u + 0.5)
        qy = np.floor(v + 0.5)
    inside = (d > 0) & (Y[..., 2] > 0) & (qx >= 0) & (qx < cs.width) & (qy >= 0) & (qy < cs.height)
    qx = np.where(inside, qx, 0).astype(np.int64)
    qy = np.where(inside, qy, 0).astype(np.int64)
    ds = np.asarray(depths[src_index], dtype=np.float64)[qy, qx]
    inside &= ds > 0
    ds_safe = np.where(inside, ds, 1.0)
    rel = np.abs(Y[..., 2] - ds_safe) / ds_safe
    n_proj = normals[ref_index] @ R_rel.T
    cosang = np.clip(np.einsum("...k,...k->...", n_proj, normals[src_index][qy, qx]), -1.0, 1.0)
    ang = np.degrees(np.arccos(cosang))
    Z = np.stack([(qx - cs.cx) / cs.fx, (qy - cs.cy) / cs.fy, np.ones_like(ds_safe)], axis=-1) * ds_safe[..., None]
    W = (Z - t_rel) @ R_rel
    with np.errstate(divide="ignore", invalid="ignore"):
        bx = cr.fx * W[..., 0] / W[..., 2] + cr.cx
        by = cr.fy * W[..., 1] / W[..., 2] + cr.cy
        v_, u_ = np.mgrid[0 : cr.height, 0 : cr.width]
        reproj = np.where(W[..., 2] > 0, np.hypot(bx - u_, by - v_), np.inf)
    ok = (
        inside
        & (rel < params.max_rel_depth_diff)
        & (ang < params.max_normal_diff_deg)
        & (reproj < params.max_reproj_err)
    )
    landing = np.where(inside, qy * cs.width + qx, -1)
    return ok, landing


@njit(cache=True)
def _claim(ref_global, cons, land_global, consumed, min_consistent):
    """Sequential consumption pass for one reference view, in scanline order."""
    n, S = cons.shape
    emit = np.zeros(n, dtype=np.bool_)
    support = np.zeros((n, S), dtype=np.bool_)
    for i in range(n):
        if consumed[ref_global[i]]:
            continue
        cnt = 0
        for j in range(S):
            if cons[i, j] and not consumed[land_global[i, j]]:
                support[i, j] = True
                cnt += 1
        if cnt >= min_consistent:
            emit[i] = True
            consumed[ref_global[i]] = True
            for j in range(S):
                if support[i, j]:
                    consumed[land_global[i, j]] = True
        else:
            for j in range(S):
                support[i, j] = False
    return emit, support


def fuse(
    depths: Sequence[np.ndarray],
    normals: Sequence[np.ndarray],
    cams: Sequence[CameraModel],
    params: FusionParams = FusionParams(),
    colors: Optional[Sequence[np.ndarray]] = None,
) -> PointCloud:
    """Average each reference estimate with its consistent source estimates.

    Views are visited in order and pixels in scanline order; every estimate
    that takes part in a fused point is marked consumed and used only once.
    """
    nv = len(depths)
    if not (len(normals) == nv == len(cams)):
        raise InvalidArgumentError("depths, normals and cameras differ in count")
    sizes = [c.width * c.height for c in cams]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    consumed = np.zeros(offsets[-1], dtype=np.bool_)
    world_pts = []
    world_nrm = []
    for v in range(nv):
        X = pixel_rays(cams[v]) * np.asarray(depths[v], dtype=np.float64)[..., None]
        world_pts.append(((X - cams[v].t) @ cams[v].R).reshape(-1, 3))
        world_nrm.append((np.asarray(normals[v], dtype=np.float64) @ cams[v].R).reshape(-1, 3))
    flat_colors = None
    if colors is not None:
        flat_colors = [np.asarray(c, dtype=np.float64).reshape(-1, 3) for c in colors]

    out_p, out_n, out_c = [], [], []
    for r in range(nv):
        srcs = [s for s in range(nv) if s != r]
        valid = np.asarray(depths[r]).ravel() > 0
        idx = np.nonzero(valid)[0]
        if len(idx) == 0 or not srcs:
            continue
        cons = np.zeros((len(idx), len(srcs)), dtype=np.bool_)
        land = np.zeros((len(idx), len(srcs)), dtype=np.int64)
        for k, s in enumerate(srcs):
            ok, landing = consistency_arrays(r, s, depths, normals, cams, params)
            cons[:, k] = ok.ravel()[idx]
            land[:, k] = np.where(landing.ravel()[idx] >= 0, landing.ravel()[idx] + offsets[s], 0)
        emit, support = _claim(idx + offsets[r], cons, land, consumed, params.min_consistent)
        if not emit.any():
            continue
        e = np.nonzero(emit)[0]
        sup = support[e]
        cnt = 1 + sup.sum(axis=1)
        P = world_pts[r][idx[e]].copy()
        N = world_nrm[r][idx[e]].copy()
        C = flat_colors[r][idx[e]].copy() if flat_colors is not None else None
        for k, s in enumerate(srcs):
            m = sup[:, k]
            li = land[e[m], k] - offsets[s]
            P[m] += world_pts[s][li]
            N[m] += world_nrm[s][li]
            if C is not None:
                C[m] += flat_colors[s][li]
        P /= cnt[:, None]
        N /= np.linalg.norm(N, axis=1, keepdims=True)
        out_p.append(P)
        out_n.append(N)
        if C is not None:
            out_c.append(np.rint(C / cnt[:, None]).astype(np.uint8))
    if not out_p:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3), np.uint8) if colors is not None else None)
    return PointCloud(
        np.concatenate(out_p),
        np.concatenate(out_n),
        np.concatenate(out_c) if out_c else None,
    )


# --- PLY -----------------------------------------------------------------------------

PLY_DTYPE = np.dtype(
    [
        ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
        ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
        ("red", "u1"), ("green", "u1"), ("blue", "u1"),
    ]
)


def ply_header(n: int) -> bytes:
    lines = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {n}",
        *(f"property float {k}" for k in ("x", "y", "z", "nx", "ny", "nz")),
        *(f"property uchar {k}" for k in ("red", "green", "blue")),
        "end_header",
    ]
    return ("\n".join(lines) + "\n").encode("ascii")


def write_ply(cloud: PointCloud, path) -> None:
    """Binary little-endian PLY, written atomically."""
    rec = np.zeros(len(cloud), dtype=PLY_DTYPE)
    for k, name in enumerate(("x", "y", "z")):
        rec[name] = cloud.points[:, k]
    for k, name in enumerate(("nx", "ny", "nz")):
        rec[name] = cloud.normals[:, k]
    if cloud.colors is not None:
        for k, name in enumerate(("red", "green", "blue")):
            rec[name] = cloud.colors[:, k]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(ply_header(len(rec)))
            f.write(rec.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_ply(path) -> PointCloud:
    """Read a PLY produced by :func:`write_ply`."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = data[: end + len(b"end_header\n")]
    n = None
    for line in header.decode("ascii").splitlines():
        if line.startswith("element vertex"):
            n = int(line.split()[2])
    if n is None or header != ply_header(n):
        raise FormatError(f"{path}: unsupported PLY layout")
    body = data[len(header):]
    if len(body) != n * PLY_DTYPE.itemsize:
        raise FormatError(f"{path}: payload is {len(body)} bytes, expected {n * PLY_DTYPE.itemsize}")
    rec = np.frombuffer(body, dtype=PLY_DTYPE)
    pts = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
    nrm = np.column_stack([rec["nx"], rec["ny"], rec["nz"]]).astype(np.float64)
    col = np.column_stack([rec["red"], rec["green"], rec["blue"]])
    return PointCloud(pts, nrm, col)
