"""Pinhole projective geometry: cameras, planes, homographies, reprojection.

Conventions
-----------
* ``R``/``t`` map world to camera coordinates: ``X_cam = R @ X_world + t``.
* Depth is the z coordinate in the camera frame, so the viewing ray of a
  pixel ``(u, v)`` is ``K^-1 [u, v, 1]`` (unit z component) and
  ``unproject(pixel, d) = d * ray``.
* Plane normals are expressed in the reference camera frame and always face
  the camera (``normal . ray < 0``), which makes the plane offset ``dist``
  positive for every valid hypothesis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateHomographyError,
    DegenerateTriangleError,
    InvalidArgumentError,
    NoIntersectionError,
    ValidationError,
)

_ROT_TOL = 1e-9


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int
    K: np.ndarray = field(init=False, repr=False, compare=False)
    K_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=_ROT_TOL, rtol=0.0):
            raise ValidationError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ROT_TOL:
            raise ValidationError(f"rotation determinant is {np.linalg.det(R):.6f}, expected +1")
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point outside the image")
        K = np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])
        K_inv = np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "K_inv", K_inv)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def in_bounds(self, pixel) -> bool:
        u, v = pixel
        return 0.0 <= u <= self.width - 1 and 0.0 <= v <= self.height - 1

    def scaled(self, factor: float, width: int, height: int) -> "CameraModel":
        """Intrinsics for an image resized by ``factor`` (pixel-center aligned)."""
        return CameraModel(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=(self.cx + 0.5) * factor - 0.5,
            cy=(self.cy + 0.5) * factor - 0.5,
            R=self.R,
            t=self.t,
            width=width,
            height=height,
        )


@dataclass(frozen=True)
class PlaneHypothesis:
    depth: float
    normal: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "depth", float(self.depth))


@dataclass(frozen=True)
class Plane3D:
    """Plane ``normal . X + dist = 0`` in camera coordinates."""

    normal: np.ndarray
    dist: float

    def __post_init__(self):
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=np.float64).reshape(3))
        object.__setattr__(self, "dist", float(self.dist))

    def residual(self, X) -> float:
        return float(self.normal @ np.asarray(X, dtype=np.float64) + self.dist)


def pixel_ray(pixel, cam: CameraModel) -> np.ndarray:
    u, v = pixel
    return np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])


def unproject(pixel, depth: float, cam: CameraModel) -> np.ndarray:
    """Back-project a pixel at z-depth ``depth`` into camera coordinates."""
    if not depth > 0:
        raise InvalidArgumentError(f"depth must be positive, got {depth}")
    return depth * pixel_ray(pixel, cam)


def project(X, cam: CameraModel) -> np.ndarray:
    """Project a camera-frame point to pixel coordinates."""
    X = np.asarray(X, dtype=np.float64)
    if X[2] <= 0:
        raise InvalidArgumentError("point is behind the camera")
    return np.array([cam.fx * X[0] / X[2] + cam.cx, cam.fy * X[1] / X[2] + cam.cy])


def world_to_camera(X, cam: CameraModel) -> np.ndarray:
    return cam.R @ np.asarray(X, dtype=np.float64) + cam.t


def camera_to_world(X, cam: CameraModel) -> np.ndarray:
    return cam.R.T @ (np.asarray(X, dtype=np.float64) - cam.t)


def relative_pose(cam_ref: CameraModel, cam_src: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Pose ``(R, t)`` taking reference-camera coordinates to source-camera coordinates."""
    R_rel = cam_src.R @ cam_ref.R.T
    t_rel = cam_src.t - R_rel @ cam_ref.t
    return R_rel, t_rel


def plane_from_points(p0, p1, p2) -> Plane3D:
    pts = np.array([p0, p1, p2], dtype=np.float64)
    n = np.cross(pts[1] - pts[0], pts[2] - pts[0])
    norm = np.linalg.norm(n)
    if 0.5 * norm < 1e-12:
        raise DegenerateTriangleError("triangle vertices are collinear or duplicated")
    n = n / norm
    if n @ pts.mean(axis=0) > 0:
        n = -n
    dist = -float(np.mean(pts @ n))
    return Plane3D(n, dist)


def hypothesis_plane(theta: PlaneHypothesis, pixel, cam: CameraModel) -> Plane3D:
    """The 3D plane a per-pixel hypothesis describes."""
    X = unproject(pixel, theta.depth, cam)
    return Plane3D(theta.normal, -float(theta.normal @ X))


def ray_plane_depth(pixel, plane: Plane3D, cam: CameraModel) -> float:
    ray = pixel_ray(pixel, cam)
    denom = float(plane.normal @ ray)
    if abs(denom) < 1e-12:
        raise NoIntersectionError("viewing ray is parallel to the plane")
    depth = -plane.dist / denom
    if not depth > 0:
        raise NoIntersectionError("plane intersects the ray behind the camera")
    return depth


def homography_from_hypothesis(
    theta: PlaneHypothesis, pixel, cam_ref: CameraModel, cam_src: CameraModel
) -> np.ndarray:
    """Plane-induced homography mapping reference pixels to source pixels.

    ``H = K_src (R_rel - t_rel n^T / dist) K_ref^-1``.
    """
    plane = hypothesis_plane(theta, pixel, cam_ref)
    R_rel, t_rel = relative_pose(cam_ref, cam_src)
    scale = max(1.0, abs(theta.depth))
    if abs(plane.dist) < 1e-12 * scale:
        raise DegenerateHomographyError("plane passes through the reference camera center")
    c_src = -R_rel.T @ t_rel
    if abs(plane.normal @ c_src + plane.dist) < 1e-12 * scale:
        raise DegenerateHomographyError("plane passes through the source camera center")
    return cam_src.K @ (R_rel - np.outer(t_rel, plane.normal) / plane.dist) @ cam_ref.K_inv


def apply_homography(H: np.ndarray, pixel) -> np.ndarray:
    p = H @ np.array([pixel[0], pixel[1], 1.0])
    return p[:2] / p[2]


def sample_depth_bilinear(depth: np.ndarray, u: float, v: float) -> float:
    """Interpolate a depth map at a sub-pixel location.

    Interpolation runs on inverse depth, which is affine in pixel coordinates
    over a plane, so planar surfaces are reproduced exactly. Returns 0 when
    the 2x2 support leaves the image or touches an invalid pixel.
    """
    h, w = depth.shape
    if not (0.0 <= u <= w - 1 and 0.0 <= v <= h - 1):
        return 0.0
    x0 = min(int(math.floor(u)), w - 2) if w > 1 else 0
    y0 = min(int(math.floor(v)), h - 2) if h > 1 else 0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    ax, ay = u - x0, v - y0
    d00, d01, d10, d11 = depth[y0, x0], depth[y0, x1], depth[y1, x0], depth[y1, x1]
    if d00 <= 0 or d01 <= 0 or d10 <= 0 or d11 <= 0:
        return 0.0
    inv = (
        (1 - ax) * (1 - ay) / d00
        + ax * (1 - ay) / d01
        + (1 - ax) * ay / d10
        + ax * ay / d11
    )
    return 1.0 / inv


def reprojection_error(
    theta: PlaneHypothesis, pixel, cam_ref: CameraModel, cam_src: CameraModel, depth_src
) -> float:
    """Forward-backward reprojection error of ``theta``'s depth through a source view.

    Returns ``inf`` when the forward projection misses the source image or
    lands on invalid source depth.
    """
    depth_src = np.asarray(getattr(depth_src, "values", depth_src), dtype=np.float64)
    X_ref = unproject(pixel, theta.depth, cam_ref)
    R_rel, t_rel = relative_pose(cam_ref, cam_src)
    X_src = R_rel @ X_ref + t_rel
    if X_src[2] <= 0:
        return math.inf
    u_s, v_s = project(X_src, cam_src)
    d_s = sample_depth_bilinear(depth_src, u_s, v_s)
    if d_s <= 0:
        return math.inf
    Y_src = unproject((u_s, v_s), d_s, cam_src)
    Y_ref = R_rel.T @ (Y_src - t_rel)
    if Y_ref[2] <= 0:
        return math.inf
    back = project(Y_ref, cam_ref)
    return float(math.hypot(back[0] - pixel[0], back[1] - pixel[1]))


def normal_angle(n1, n2) -> float:
    c = float(np.clip(np.dot(n1, n2), -1.0, 1.0))
    return math.acos(c)


# --- array helpers ---------------------------------------------------------

def pixel_rays(cam: CameraModel) -> np.ndarray:
    """(H, W, 3) viewing rays with unit z for every pixel center."""
    v, u = np.mgrid[0 : cam.height, 0 : cam.width].astype(np.float64)
    rays = np.empty((cam.height, cam.width, 3))
    rays[..., 0] = (u - cam.cx) / cam.fx
    rays[..., 1] = (v - cam.cy) / cam.fy
    rays[..., 2] = 1.0
    return rays


def unproject_map(depth: np.ndarray, cam: CameraModel) -> np.ndarray:
    """(H, W, 3) camera-frame points for a whole depth map."""
    return pixel_rays(cam) * np.asarray(depth, dtype=np.float64)[..., None]


def points_to_world(X_cam: np.ndarray, cam: CameraModel) -> np.ndarray:
    return (X_cam - cam.t) @ cam.R


def points_to_camera(X_world: np.ndarray, cam: CameraModel) -> np.ndarray:
    return X_world @ cam.R.T + cam.t


def look_at(eye, target, down=(0.0, 1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera ``(R, t)`` for a camera at ``eye`` looking at ``target``.

    Camera axes follow the image convention: x right, y down, z forward;
    ``down`` is the world direction that should appear downward in the image.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(down, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ eye
