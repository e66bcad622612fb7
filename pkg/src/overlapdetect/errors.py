"""Exception hierarchy shared by every module."""


class OverlapDetectError(Exception):
    """Base class for all library errors."""


class InvalidArgument(OverlapDetectError, ValueError):
    """An argument violates a documented precondition."""


class ModelInvalid(OverlapDetectError, ValueError):
    """A source model or kernel fails validation."""


class DivergenceUndefined(OverlapDetectError, ValueError):
    """A divergence was requested for a pair violating absolute continuity."""


class ExponentUndefined(OverlapDetectError, ValueError):
    """An exponent was requested for a channel carrying no information."""


class BoundUndefined(OverlapDetectError, ValueError):
    """A bound needs a non-degenerate variance."""


class Unsupported(OverlapDetectError, NotImplementedError):
    """The requested operation is not available for this model type."""
