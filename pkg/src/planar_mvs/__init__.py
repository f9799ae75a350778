"""Planar-prior-assisted PatchMatch multi-view stereo."""
import os as _os

# numba fixes its thread-pool size at import; allow up to 4 workers even on
# small machines so ``--threads 4`` is always accepted.
_os.environ.setdefault("NUMBA_NUM_THREADS", str(max(_os.cpu_count() or 1, 4)))

from .errors import MVSError  # noqa: E402
from .geometry import CameraModel, PlaneHypothesis, Plane3D  # noqa: E402

__version__ = "0.1.0"

__all__ = ["CameraModel", "PlaneHypothesis", "Plane3D", "MVSError", "__version__"]
