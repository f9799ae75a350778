import math

import numpy as np
import pytest

from planar_mvs.dataset import render_synthetic_scene, textured_scene_spec
from planar_mvs.geometry import CameraModel, look_at


def random_rotation(rng) -> np.ndarray:
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_camera(rng, width=160, height=120) -> CameraModel:
    f = rng.uniform(100, 400)
    return CameraModel(
        f,
        f * rng.uniform(0.9, 1.1),
        rng.uniform(0.3, 0.7) * width,
        rng.uniform(0.3, 0.7) * height,
        random_rotation(rng),
        rng.uniform(-1, 1, 3),
        width,
        height,
    )


def random_facing_normal(rng, ray) -> np.ndarray:
    while True:
        n = rng.standard_normal(3)
        n /= np.linalg.norm(n)
        if n @ ray > 0:
            n = -n
        # keep the plane reasonably oblique so the homography is well conditioned
        if -(n @ ray) / np.linalg.norm(ray) > 0.3:
            return n


def simple_camera(width=64, height=48, f=60.0, eye=(0.0, 0.0, 0.0), target=(0.0, 0.0, 1.0)) -> CameraModel:
    R, t = look_at(eye, target)
    return CameraModel(f, f, (width - 1) / 2, (height - 1) / 2, R, t, width, height)


def two_view_rig(width=64, height=48, baseline=0.2, f=60.0):
    ref = simple_camera(width, height, f)
    src = simple_camera(width, height, f, eye=(baseline, 0.0, 0.0), target=(baseline, 0.0, 1.0))
    return ref, src


@pytest.fixture(scope="session")
def small_scene():
    """Small textured scene shared by engine and fusion tests."""
    return render_synthetic_scene(textured_scene_spec(96, 72, 3), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


DEG = math.pi / 180
