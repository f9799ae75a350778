import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_camera, random_facing_normal, simple_camera, two_view_rig
from planar_mvs.errors import (
    DegenerateHomographyError,
    DegenerateTriangleError,
    InvalidArgumentError,
    NoIntersectionError,
    ValidationError,
)
from planar_mvs.geometry import (
    CameraModel,
    PlaneHypothesis,
    Plane3D,
    apply_homography,
    homography_from_hypothesis,
    hypothesis_plane,
    look_at,
    normal_angle,
    pixel_ray,
    plane_from_points,
    project,
    ray_plane_depth,
    relative_pose,
    reprojection_error,
    unproject,
)


# --- camera model -----------------------------------------------------------

def test_camera_rejects_reflection():
    R = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValidationError):
        CameraModel(100, 100, 10, 10, R, np.zeros(3), 20, 20)


def test_camera_rejects_non_orthonormal():
    R = np.eye(3) * 1.001
    with pytest.raises(ValidationError):
        CameraModel(100, 100, 10, 10, R, np.zeros(3), 20, 20)


@pytest.mark.parametrize("fx,cx", [(0.0, 10.0), (-5.0, 10.0), (100.0, 20.0), (100.0, -1.0)])
def test_camera_rejects_bad_intrinsics(fx, cx):
    with pytest.raises(ValidationError):
        CameraModel(fx, 100, cx, 10, np.eye(3), np.zeros(3), 20, 20)


def test_look_at_forward_is_identity():
    R, t = look_at((0, 0, 0), (0, 0, 1))
    np.testing.assert_allclose(R, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(t, 0, atol=1e-15)


# --- unproject / project ----------------------------------------------------------

def test_unproject_principal_ray():
    cam = simple_camera()
    np.testing.assert_allclose(unproject((cam.cx, cam.cy), 1.0, cam), [0, 0, 1])


def test_unproject_unit_focal_scaling():
    cam = CameraModel(1.0, 1.0, 0.5, 0.5, np.eye(3), np.zeros(3), 4, 4)
    X = unproject((cam.cx + cam.fx, cam.cy), 2.0, cam)
    assert X[0] / X[2] == pytest.approx(1.0)
    assert X[2] == pytest.approx(2.0)


@pytest.mark.parametrize("depth", [0.0, -1.0])
def test_unproject_rejects_non_positive_depth(depth):
    with pytest.raises(InvalidArgumentError):
        unproject((1, 1), depth, simple_camera())


@settings(max_examples=200, deadline=None)
@given(
    u=st.floats(0, 159), v=st.floats(0, 119), depth=st.floats(0.1, 100.0), seed=st.integers(0, 2**32 - 1)
)
def test_project_unproject_roundtrip(u, v, depth, seed):
    cam = random_camera(np.random.default_rng(seed))
    X = unproject((u, v), depth, cam)
    np.testing.assert_allclose(project(X, cam), (u, v), atol=1e-6)
    assert X[2] == pytest.approx(depth, rel=1e-12)


# --- planes --------------------------------------------------------------------------

def test_plane_from_points_fronto_parallel():
    pl = plane_from_points((1, 0, 1), (0, 1, 1), (0, 0, 1))
    np.testing.assert_allclose(pl.normal, [0, 0, -1])
    assert pl.dist == pytest.approx(1.0)


@pytest.mark.parametrize("pts", [((0, 0, 1), (1, 1, 1), (2, 2, 1)), ((1, 2, 3), (1, 2, 3), (0, 0, 1))])
def test_plane_from_points_degenerate(pts):
    with pytest.raises(DegenerateTriangleError):
        plane_from_points(*pts)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=9, max_size=9), st.permutations([0, 1, 2]))
def test_plane_from_points_residuals_and_permutation(coords, perm):
    pts = np.array(coords).reshape(3, 3) + [0, 0, 10]
    area = 0.5 * np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0]))
    if area < 1e-3:
        return
    pl = plane_from_points(*pts)
    for p in pts:
        assert abs(pl.residual(p)) < 1e-9
    if abs(pl.dist) < 1e-6:
        return  # plane through the camera center has no facing side
    assert pl.normal @ pts.mean(axis=0) < 0
    pl2 = plane_from_points(*pts[list(perm)])
    np.testing.assert_allclose(pl2.normal, pl.normal, atol=1e-9)
    assert pl2.dist == pytest.approx(pl.dist, abs=1e-9)


def test_ray_plane_depth_fronto():
    cam = simple_camera()
    pl = Plane3D((0, 0, -1), 1.0)
    assert ray_plane_depth((cam.cx, cam.cy), pl, cam) == pytest.approx(1.0)
    for px in [(0, 0), (63, 47), (10.5, 30.25)]:
        d = ray_plane_depth(px, pl, cam)
        assert unproject(px, d, cam)[2] == pytest.approx(1.0, abs=1e-12)


def test_ray_plane_depth_parallel_and_behind():
    cam = simple_camera()
    with pytest.raises(NoIntersectionError):
        ray_plane_depth((cam.cx, cam.cy), Plane3D((1, 0, 0), 1.0), cam)
    with pytest.raises(NoIntersectionError):
        ray_plane_depth((cam.cx, cam.cy), Plane3D((0, 0, -1), -1.0), cam)


@settings(max_examples=200, deadline=None)
@given(u=st.floats(0, 159), v=st.floats(0, 119), depth=st.floats(0.5, 20), seed=st.integers(0, 2**32 - 1))
def test_ray_plane_depth_reproduces_hypothesis(u, v, depth, seed):
    rng = np.random.default_rng(seed)
    cam = random_camera(rng)
    n = random_facing_normal(rng, pixel_ray((u, v), cam))
    theta = PlaneHypothesis(depth, n)
    pl = hypothesis_plane(theta, (u, v), cam)
    assert ray_plane_depth((u, v), pl, cam) == pytest.approx(depth, rel=1e-9)
    # another pixel on the same plane lies on it
    q = (rng.uniform(0, 159), rng.uniform(0, 119))
    try:
        dq = ray_plane_depth(q, pl, cam)
    except NoIntersectionError:
        return
    assert abs(pl.residual(unproject(q, dq, cam))) < 1e-9 * max(1.0, dq)


# --- homographies -----------------------------------------------------------------------

def test_homography_identity_for_same_camera():
    cam = simple_camera()
    H = homography_from_hypothesis(PlaneHypothesis(2.0, (0, 0, -1)), (10, 10), cam, cam)
    np.testing.assert_allclose(H / H[2, 2], np.eye(3), atol=1e-12)


def test_homography_pure_translation():
    f, b, d = 60.0, 0.2, 2.5
    ref, src = two_view_rig(f=f, baseline=b)
    H = homography_from_hypothesis(PlaneHypothesis(d, (0, 0, -1)), (30, 20), ref, src)
    for px in [(5, 5), (30, 20), (60, 40)]:
        X = unproject(px, d, ref)
        direct = project(X + np.array([-b, 0, 0]), src)
        np.testing.assert_allclose(apply_homography(H, px), direct, atol=1e-9)
        np.testing.assert_allclose(apply_homography(H, px) - px, [-f * b / d, 0.0], atol=1e-9)


def _homography_samples(n, seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        ref = random_camera(rng)
        # source camera: a small random motion of the reference
        R_small = look_at((0, 0, 0), (rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 1.0))[0]
        R_src = R_small @ ref.R
        c_src = ref.center + rng.uniform(-0.5, 0.5, 3)
        src = CameraModel(ref.fx, ref.fy, ref.cx, ref.cy, R_src, -R_src @ c_src, ref.width, ref.height)
        px = (rng.uniform(0, 159), rng.uniform(0, 119))
        n = random_facing_normal(rng, pixel_ray(px, ref))
        theta = PlaneHypothesis(rng.uniform(2, 10), n)
        H = homography_from_hypothesis(theta, px, ref, src)
        pl = hypothesis_plane(theta, px, ref)
        R_rel, t_rel = relative_pose(ref, src)
        for _ in range(20):
            q = (rng.uniform(0, 159), rng.uniform(0, 119))
            try:
                dq = ray_plane_depth(q, pl, ref)
            except NoIntersectionError:
                continue
            Xs = R_rel @ unproject(q, dq, ref) + t_rel
            if Xs[2] <= 0.1:
                continue
            worst = max(worst, float(np.linalg.norm(apply_homography(H, q) - project(Xs, src))))
    return worst


def test_homography_matches_direct_projection():
    assert _homography_samples(100, 7) < 1e-6


def test_homography_degenerate_plane_through_source_center():
    ref, src = two_view_rig(baseline=0.2)
    # plane x = 0.2 in the reference frame contains the source center
    n = np.array([-1.0, 0.0, 0.0])
    with pytest.raises(DegenerateHomographyError):
        # pixel whose ray meets x=0.2 at depth 1: u = cx + f*0.2
        homography_from_hypothesis(PlaneHypothesis(1.0, n), (ref.cx + ref.fx * 0.2, ref.cy), ref, src)


# --- reprojection error -----------------------------------------------------------------

def _gt_depth(cam, plane_z):
    return np.full((cam.height, cam.width), plane_z)


def test_reprojection_error_consistent_maps():
    ref, src = two_view_rig()
    theta = PlaneHypothesis(2.0, (0, 0, -1))
    assert reprojection_error(theta, (30, 20), ref, src, _gt_depth(src, 2.0)) < 1e-6


def test_reprojection_error_off_image_is_inf():
    ref, src = two_view_rig(baseline=5.0)
    theta = PlaneHypothesis(1.0, (0, 0, -1))
    assert reprojection_error(theta, (2, 20), ref, src, _gt_depth(src, 1.0)) == math.inf


def test_reprojection_error_matches_hand_chain():
    # fronto plane at z = 2, source depth perturbed by +1%
    f, b, z = 60.0, 0.2, 2.0
    ref, src = two_view_rig(f=f, baseline=b)
    u, v = 40.0, 20.0
    theta = PlaneHypothesis(z, (0, 0, -1))
    ds = z * 1.01
    # ref pixel -> 3D -> source pixel
    X = np.array([(u - ref.cx) * z / f, (v - ref.cy) * z / f, z])
    us = f * (X[0] - b) / z + src.cx
    vs = f * X[1] / z + src.cy
    # source pixel at the perturbed depth -> world -> reference
    Y = np.array([(us - src.cx) * ds / f + b, (vs - src.cy) * ds / f, ds])
    back = np.array([f * Y[0] / Y[2] + ref.cx, f * Y[1] / Y[2] + ref.cy])
    expected = np.hypot(back[0] - u, back[1] - v)
    got = reprojection_error(theta, (u, v), ref, src, _gt_depth(src, ds))
    assert got == pytest.approx(expected, rel=1e-9)
    # closed form for this rig: |f b (1/z - 1/ds)|
    assert got == pytest.approx(abs(f * b * (1 / z - 1 / ds)), rel=1e-9)


# --- normal angle -------------------------------------------------------------------------

def test_normal_angle_cases():
    assert normal_angle([0, 0, 1], [0, 0, 1]) == 0.0
    assert normal_angle([1, 0, 0], [0, 1, 0]) == pytest.approx(math.pi / 2)
    n = np.array([1.0, 0.0, 0.0]) * (1 + 1e-16)
    assert normal_angle(n, n * (1 + 2e-16)) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_normal_angle_symmetric_in_range(v):
    a, b = np.array(v[:3]), np.array(v[3:])
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    r = normal_angle(a, b)
    assert 0 <= r <= math.pi
    assert r == normal_angle(b, a)
