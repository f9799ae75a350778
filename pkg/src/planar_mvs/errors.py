"""Exception hierarchy shared by all modules."""


class MVSError(Exception):
    """Base class for all errors raised by planar_mvs."""


class InvalidArgumentError(MVSError, ValueError):
    pass


class ValidationError(MVSError, ValueError):
    """Input data violates a documented invariant."""


class DegenerateTriangleError(MVSError):
    pass


class NoIntersectionError(MVSError):
    pass


class DegenerateHomographyError(MVSError):
    pass


class FormatError(MVSError):
    """Malformed or truncated file."""


class LoadError(MVSError):
    pass


class RenderError(MVSError):
    pass


class InsufficientSupportError(MVSError):
    """Too few credible correspondences (or all collinear) to build a prior."""


class UnreliablePixelError(MVSError):
    """All view-selection weights are zero."""


class EmptyGroundTruthError(MVSError):
    pass


class EmptyCloudError(MVSError):
    pass
