"""Geometric-consistency cost: photometric cost plus a truncated reprojection penalty."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, UnreliablePixelError
from .geometry import CameraModel, PlaneHypothesis, reprojection_error
from .patchmatch import CostFunction


@dataclass
class GeomContext:
    """Depth maps of the source views plus the penalty weight and truncation."""

    depths: Sequence[np.ndarray]
    lambda_geo: float = 0.1
    tau_geo: float = 5.0

    def __post_init__(self):
        if self.lambda_geo < 0:
            raise InvalidArgumentError("lambda_geo must be non-negative")
        if not self.tau_geo > 0:
            raise InvalidArgumentError("tau_geo must be positive")
        self.depths = [np.asarray(getattr(d, "values", d), dtype=np.float64) for d in self.depths]

    def cost_function(self) -> CostFunction:
        return CostFunction("geo", src_depths=self.depths)


def aggregate_geo(weights, costs, errors, lambda_geo: float = 0.1, tau_geo: float = 5.0) -> float:
    """Weighted mean of ``m_j + lambda_geo * min(err_j, tau_geo)``."""
    w = np.asarray(getattr(weights, "w", weights), dtype=np.float64)
    m = np.asarray(costs, dtype=np.float64)
    e = np.minimum(np.asarray(errors, dtype=np.float64), tau_geo)
    total = w.sum()
    if not total > 0:
        raise UnreliablePixelError("all view-selection weights are zero")
    return float((w * (m + lambda_geo * e)).sum() / total)


def c_geo(
    pixel,
    theta: PlaneHypothesis,
    weights,
    costs,
    ctx: GeomContext,
    cam_ref: CameraModel,
    src_cams: Sequence[CameraModel],
) -> float:
    """Geometric-consistency cost of ``theta`` at ``pixel``.

    ``src_cams`` and ``ctx.depths`` list the source views in the same order as
    ``weights`` and ``costs``.
    """
    if len(src_cams) != len(ctx.depths):
        raise InvalidArgumentError("need one depth map per source camera")
    errors = [
        reprojection_error(theta, pixel, cam_ref, cs, d) for cs, d in zip(src_cams, ctx.depths)
    ]
    return aggregate_geo(weights, costs, errors, ctx.lambda_geo, ctx.tau_geo)
