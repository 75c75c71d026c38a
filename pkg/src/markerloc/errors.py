"""Exception hierarchy shared by all markerloc modules."""


class MarkerLocError(Exception):
    """Base class for every error raised by this package."""


class NonPositiveDepth(MarkerLocError, ValueError):
    """A point lies on or behind the camera plane."""


class DegenerateGeometry(MarkerLocError, ValueError):
    """Correspondences do not constrain the requested pose solver."""


class NumericalFailure(MarkerLocError, ArithmeticError):
    """An iterative solver could not produce a finite solution."""


class ConsensusFailure(MarkerLocError):
    """RANSAC found no model with enough inliers."""


class NoMeasurement(MarkerLocError, ValueError):
    """A filter operation needs at least one detected marker."""


class DegenerateRectangle(MarkerLocError, ValueError):
    pass


class DegenerateSpeed(MarkerLocError, ValueError):
    pass


class LengthMismatch(MarkerLocError, ValueError):
    pass


class InsufficientVisibility(MarkerLocError):
    """Fewer markers are visible than the experiment requires."""


class ConfigError(MarkerLocError):
    """Invalid or unreadable experiment configuration."""
