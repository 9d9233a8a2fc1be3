"""Spherical-harmonic reference fields on the unit sphere.

Real harmonics follow the cos/sin split

    q_{l,0}(theta),  sqrt(2) q_{l,m}(theta) cos(m phi),  sqrt(2) q_{l,m}(theta) sin(m phi)

and are flattened in the order ``l`` ascending, ``m`` ascending, cosine
before sine. That order is also the draw order of the coefficients, so a
seed reproduces the same field everywhere it is used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import standard_normal

_FOUR_PI = 4.0 * np.pi
_EXACT_FACTORIAL_MAX = 30


def n_coefficients(L: int) -> int:
    return (L + 1) ** 2


def degrees(L: int) -> np.ndarray:
    """Degree ``l`` of every flattened basis function up to ``L``."""
    return np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)


def _factorial_ratio(l: int, m: int) -> float:
    """``(l - m)! / (l + m)!``."""
    if l + m <= _EXACT_FACTORIAL_MAX:
        return math.factorial(l - m) / math.factorial(l + m)
    return math.exp(math.lgamma(l - m + 1) - math.lgamma(l + m + 1))


def q_lm(l: int, m: int, theta):
    """Normalised associated Legendre function ``q_{l,m}(theta)``.

    Includes the Condon-Shortley phase, so ``q_{1,1}`` is negative on the
    upper hemisphere.
    """
    if not 0 <= m <= l:
        raise ValueError(f"need 0 <= m <= l, got l={l}, m={m}")
    mu = np.cos(np.asarray(theta, dtype=float))
    sin = np.sin(np.asarray(theta, dtype=float))
    return _normalised(l, m, mu, np.abs(sin))


def _normalised(l, m, mu, sin):
    q = np.full_like(mu, 1.0 / np.sqrt(_FOUR_PI))
    for j in range(1, m + 1):
        q = -np.sqrt((2 * j + 1) / (2 * j)) * sin * q
    if l == m:
        return q
    prev, cur = q, np.sqrt(2 * m + 3) * mu * q
    for j in range(m + 2, l + 1):
        a = np.sqrt((4 * j * j - 1) / (j * j - m * m))
        b = np.sqrt(((j - 1) ** 2 - m * m) / (4 * (j - 1) ** 2 - 1))
        prev, cur = cur, a * (mu * cur - b * prev)
    return cur


def legendre_p(l: int, m: int, mu):
    """Associated Legendre function ``P_{l,m}(mu)`` with Condon-Shortley phase."""
    if not 0 <= m <= l:
        raise ValueError(f"need 0 <= m <= l, got l={l}, m={m}")
    mu = np.asarray(mu, dtype=float)
    sin = np.sqrt(np.clip(1.0 - mu * mu, 0.0, None))
    norm = math.sqrt((2 * l + 1) / _FOUR_PI * _factorial_ratio(l, m))
    return _normalised(l, m, mu, sin) / norm


def real_harmonics(L: int, x) -> np.ndarray:
    """All real orthonormal harmonics up to degree ``L`` at unit vectors ``x``.

    Returns an array of shape ``x.shape[:-1] + ((L + 1)**2,)``.
    """
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    x = x.reshape(-1, 3)
    mu = np.clip(x[:, 2], -1.0, 1.0)
    sin = np.hypot(x[:, 0], x[:, 1])
    phi = np.arctan2(x[:, 1], x[:, 0])
    out = np.empty((len(x), n_coefficients(L)))
    root2 = np.sqrt(2.0)
    qmm = np.full_like(mu, 1.0 / np.sqrt(_FOUR_PI))
    for m in range(L + 1):
        if m > 0:
            qmm = -np.sqrt((2 * m + 1) / (2 * m)) * sin * qmm
            cos_m, sin_m = root2 * np.cos(m * phi), root2 * np.sin(m * phi)
        prev, cur = None, qmm
        for l in range(m, L + 1):
            if l == m + 1:
                prev, cur = cur, np.sqrt(2 * m + 3) * mu * cur
            elif l > m + 1:
                a = np.sqrt((4 * l * l - 1) / (l * l - m * m))
                b = np.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
                prev, cur = cur, a * (mu * cur - b * prev)
            base = l * l
            if m == 0:
                out[:, base] = cur
            else:
                out[:, base + 2 * m - 1] = cur * cos_m
                out[:, base + 2 * m] = cur * sin_m
    return out.reshape(shape + (out.shape[-1],))


def degree_weights(kappa: float, s: float, L: int) -> np.ndarray:
    """``(kappa^2 + l(l+1))^{-s}`` for every flattened basis function."""
    l = degrees(L).astype(float)
    return (kappa**2 + l * (l + 1.0)) ** (-s)


def exact_norm_sq(kappa: float, s: float, L: int = 100_000) -> float:
    """``sum_{l=0}^{L} (kappa^2 + l(l+1))^{-2s} (2l+1)``, correctly rounded."""
    l = np.arange(L + 1, dtype=float)
    terms = (kappa**2 + l * (l + 1.0)) ** (-2.0 * s) * (2.0 * l + 1.0)
    return math.fsum(terms[::-1])


@dataclass(frozen=True)
class HarmonicCoefficients:
    """Standard normal coefficients of a truncated white noise expansion."""

    L: int
    xi: np.ndarray  # flattened, length (L + 1)**2

    def __post_init__(self):
        if self.xi.shape[-1] != n_coefficients(self.L):
            raise ValueError("coefficient count does not match the truncation degree")

    def xi1(self, l: int, m: int) -> float:
        return float(self.xi[..., l * l + max(2 * m - 1, 0)])

    def xi2(self, l: int, m: int) -> float:
        if m == 0:
            raise ValueError("xi2 is unused for m = 0")
        return float(self.xi[..., l * l + 2 * m])

    def noise(self, x):
        return evaluate_noise(self, x)

    def solution(self, kappa, s, x):
        return evaluate_solution(self, kappa, s, x)


def sample_coefficients(L: int, seed: int, sample_index: int, tag: str = "kl") -> HarmonicCoefficients:
    """Draw ``(L+1)^2`` standard normals from the substream of ``sample_index``."""
    if L < 0:
        raise ValueError("truncation degree must be non-negative")
    xi = standard_normal(seed, sample_index, n_coefficients(L), tag=tag)
    return HarmonicCoefficients(L, xi)


def _check_unit(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(np.linalg.norm(x, axis=-1) - 1.0) > 1e-10):
        raise ValueError("evaluation points must lie on the unit sphere")
    return x


def evaluate_noise(coeffs: HarmonicCoefficients, x):
    """Truncated white noise expansion at unit vectors ``x``."""
    x = _check_unit(x)
    return real_harmonics(coeffs.L, x) @ coeffs.xi


def evaluate_solution(coeffs: HarmonicCoefficients, kappa: float, s: float, x):
    """Truncated Matern field ``sum (kappa^2 + l(l+1))^{-s} xi Y`` at ``x``."""
    x = _check_unit(x)
    return real_harmonics(coeffs.L, x) @ (degree_weights(kappa, s, coeffs.L) * coeffs.xi)


def pointwise_variance(kappa: float, s: float, L: int) -> float:
    """Variance of the truncated field at any point (addition theorem)."""
    return exact_norm_sq(kappa, s, L) / _FOUR_PI
