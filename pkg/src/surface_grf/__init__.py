"""Whittle-Matern Gaussian random fields on closed surfaces.

Fractional SPDE ``(kappa^2 - Delta)^s u = w`` discretised with bilinear
surface finite elements and a sinc quadrature for the fractional power.
"""
from .exceptions import (
    ConfigError,
    DegeneratePoint,
    InvalidFraction,
    NoConvergence,
    NotPositiveDefinite,
    PointLocationFailure,
    ProjectionFailure,
    SurfaceGRFError,
)
from .geometry import Sphere, Torus
from .mesh import SurfaceMesh, base_mesh, make_mesh, refine
from .sampler import (
    FactorizedOperator,
    NoiseSampler,
    SincScheme,
    SpectralOperator,
    WhittleMaternSampler,
    apply_fractional_inverse,
    build_scheme,
    scalar_sinc,
)
from .spectral import exact_norm_sq, real_harmonics, sample_coefficients

__all__ = [
    "ConfigError",
    "DegeneratePoint",
    "FactorizedOperator",
    "InvalidFraction",
    "NoConvergence",
    "NoiseSampler",
    "NotPositiveDefinite",
    "PointLocationFailure",
    "ProjectionFailure",
    "SincScheme",
    "SpectralOperator",
    "Sphere",
    "SurfaceGRFError",
    "SurfaceMesh",
    "Torus",
    "WhittleMaternSampler",
    "apply_fractional_inverse",
    "base_mesh",
    "build_scheme",
    "exact_norm_sq",
    "make_mesh",
    "real_harmonics",
    "refine",
    "sample_coefficients",
    "scalar_sinc",
]
__version__ = "0.1.0"
