"""Depth-map and point-cloud metrics, plus text/JSON report writers."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .dataset import atomic_write
from .errors import EmptyCloudError, EmptyGroundTruthError, InvalidArgumentError


@dataclass
class DepthMetrics:
    thresholds: list[float]
    fractions: list[float]
    valid_pixels: int
    relative: bool = False

    def as_dict(self) -> dict:
        kind = "rel" if self.relative else "abs"
        out = {f"depth_{kind}_lt_{t:g}": f for t, f in zip(self.thresholds, self.fractions)}
        out["depth_valid_pixels"] = self.valid_pixels
        return out


@dataclass
class CloudMetrics:
    accuracy: float
    completeness: float
    f1: float
    tau: float
    n_est: int
    n_gt: int

    def as_dict(self) -> dict:
        return asdict(self)


def _values(m) -> np.ndarray:
    return np.asarray(getattr(m, "values", m), dtype=np.float64)


def depth_metrics(est, gt, thresholds: Sequence[float] = (0.02, 0.1), relative: bool = False, mask=None) -> DepthMetrics:
    """Fraction of GT-valid pixels whose depth error is below each threshold.

    Invalid (zero) estimates count as errors. With ``relative=True`` the error
    is ``|est - gt| / gt``. ``mask`` optionally restricts the evaluated pixels.
    """
    e, g = _values(est), _values(gt)
    if e.shape != g.shape:
        raise InvalidArgumentError(f"depth maps differ in size: {e.shape} vs {g.shape}")
    valid = g > 0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        raise EmptyGroundTruthError("no valid ground-truth pixels")
    err = np.abs(e[valid] - g[valid])
    if relative:
        err = err / g[valid]
    err[e[valid] <= 0] = np.inf
    ts = [float(t) for t in thresholds]
    return DepthMetrics(ts, [float(np.mean(err < t)) for t in ts], n, relative)


def nearest_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact distance from every point of ``a`` to its nearest point of ``b``."""
    d, _ = cKDTree(b).query(a, k=1)
    return d


def cloud_metrics(est, gt, tau: float) -> CloudMetrics:
    a = np.asarray(getattr(est, "points", est), dtype=np.float64).reshape(-1, 3)
    b = np.asarray(getattr(gt, "points", gt), dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloudError("both clouds must be non-empty")
    if not tau > 0:
        raise InvalidArgumentError("tau must be positive")
    acc = float(np.mean(nearest_distances(a, b) < tau))
    comp = float(np.mean(nearest_distances(b, a) < tau))
    f1 = 0.0 if acc + comp == 0 else 2 * acc * comp / (acc + comp)
    return CloudMetrics(acc, comp, f1, float(tau), len(a), len(b))


def format_report(values: dict) -> str:
    """Flat ``key=value`` lines, sorted by key."""
    lines = []
    for k in sorted(values):
        v = values[k]
        lines.append(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, _, v = line.partition("=")
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out


def write_report(values: dict, stem) -> tuple[Path, Path]:
    """Write ``stem.txt`` (key=value) and ``stem.json``; returns both paths."""
    stem = Path(stem)
    txt, js = stem.with_suffix(".txt"), stem.with_suffix(".json")
    atomic_write(txt, format_report(values).encode())
    atomic_write(js, (json.dumps(values, indent=2, sort_keys=True) + "\n").encode())
    return txt, js
