import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from planar_mvs.errors import EmptyCloudError, EmptyGroundTruthError, InvalidArgumentError
from planar_mvs.evaluate import (
    cloud_metrics,
    depth_metrics,
    format_report,
    nearest_distances,
    parse_report,
    write_report,
)


def test_depth_metrics_example():
    gt = np.array([[1.0, 2.0], [3.0, 0.0]])
    est = np.array([[1.01, 2.5], [0.0, 5.0]])
    m = depth_metrics(est, gt, (0.02, 0.6))
    assert m.valid_pixels == 3
    assert m.fractions == pytest.approx([1 / 3, 2 / 3])
    r = depth_metrics(est, gt, (0.02,), relative=True)
    assert r.fractions == pytest.approx([1 / 3])
    assert r.as_dict() == {"depth_rel_lt_0.02": pytest.approx(1 / 3), "depth_valid_pixels": 3}


def test_depth_metrics_mask_and_errors():
    gt = np.ones((2, 2))
    est = np.array([[1.0, 9.0], [9.0, 9.0]])
    mask = np.array([[True, False], [False, False]])
    assert depth_metrics(est, gt, (0.1,), mask=mask).fractions == [1.0]
    with pytest.raises(EmptyGroundTruthError):
        depth_metrics(est, np.zeros((2, 2)))
    with pytest.raises(InvalidArgumentError):
        depth_metrics(np.ones((2, 3)), gt)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (5, 6), elements=st.floats(0.1, 10)), arrays(np.float64, (5, 6), elements=st.floats(0, 10)))
def test_depth_fractions_monotone(gt, est):
    m = depth_metrics(est, gt, (0.01, 0.1, 1.0, 10.0))
    assert all(0 <= f <= 1 for f in m.fractions)
    assert m.fractions == sorted(m.fractions)
    assert depth_metrics(gt, gt, (1e-12,)).fractions == [1.0]


def test_cloud_metrics_example():
    gt = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0.0]])
    est = np.array([[0, 0, 0.05], [1, 0, 0.05], [10, 0, 0.0]])
    m = cloud_metrics(est, gt, 0.1)
    assert m.accuracy == pytest.approx(2 / 3)
    assert m.completeness == pytest.approx(0.5)
    assert m.f1 == pytest.approx(2 * (2 / 3) * 0.5 / (2 / 3 + 0.5))
    assert (m.n_est, m.n_gt) == (3, 4)
    with pytest.raises(EmptyCloudError):
        cloud_metrics(np.zeros((0, 3)), gt, 0.1)
    with pytest.raises(InvalidArgumentError):
        cloud_metrics(est, gt, 0.0)


def test_nearest_distances_match_brute_force():
    rng = np.random.default_rng(0)
    a, b = rng.random((200, 3)), rng.random((150, 3))
    brute = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1)).min(1)
    np.testing.assert_allclose(nearest_distances(a, b), brute, rtol=1e-12)


def test_cloud_identity_is_perfect():
    pts = np.random.default_rng(1).random((50, 3))
    m = cloud_metrics(pts, pts, 1e-9)
    assert m.accuracy == m.completeness == m.f1 == 1.0


def test_report_roundtrip(tmp_path):
    values = {"b_count": 3, "a_frac": 0.25, "name": "x"}
    txt = format_report(values)
    assert txt.splitlines()[0] == "a_frac=0.250000"
    assert parse_report(txt) == values
    t, j = write_report(values, tmp_path / "r")
    assert parse_report(t.read_text()) == values
    assert json.loads(j.read_text()) == values
