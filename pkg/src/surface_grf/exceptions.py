class SurfaceGRFError(Exception):
    """Base class for errors raised by this package."""


class DegeneratePoint(SurfaceGRFError, ValueError):
    """The closest-point projection is undefined or untrusted at a point."""


class ProjectionFailure(SurfaceGRFError):
    """A refined vertex could not be lifted back onto the surface."""


class NotPositiveDefinite(SurfaceGRFError, ValueError):
    """A Cholesky pivot was not positive."""


class NoConvergence(SurfaceGRFError, RuntimeError):
    """An iterative solver hit its iteration limit."""


class InvalidFraction(SurfaceGRFError, ValueError):
    """The fractional power lies outside the admissible open interval."""


class PointLocationFailure(SurfaceGRFError):
    """A surface point could not be bracketed by a mesh element."""


class ConfigError(SurfaceGRFError, ValueError):
    """Invalid experiment configuration."""
