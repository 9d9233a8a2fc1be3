"""Exact closed surfaces: signed distance, closest-point lift and area ratio.

Everything here is vectorised over arrays of points with shape ``(..., 3)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegeneratePoint

# Fraction of the curvature-limited tube width inside which the lift is trusted.
TUBE_FRACTION = 0.9


def _norm(v):
    return np.sqrt(np.sum(v * v, axis=-1))


@dataclass(frozen=True)
class Sphere:
    """Sphere of given radius centred at the origin."""

    radius: float = 1.0
    kind = "sphere"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")

    @property
    def tube_width(self) -> float:
        return self.radius

    @property
    def area(self) -> float:
        return 4.0 * np.pi * self.radius**2

    @property
    def euler_characteristic(self) -> int:
        return 2

    def _radial(self, p):
        rho = _norm(p)
        if np.any(rho <= 1e-14 * self.radius):
            raise DegeneratePoint("the sphere centre has no unique closest point")
        return rho

    def signed_distance(self, p):
        p = np.asarray(p, dtype=float)
        return _norm(p) - self.radius

    def normal(self, p):
        p = np.asarray(p, dtype=float)
        return p / self._radial(p)[..., None]

    def closest_point(self, p):
        p = np.asarray(p, dtype=float)
        return self.radius * p / self._radial(p)[..., None]

    def weighted_average(self, points, weights, tol=1e-15, max_iter=100):
        """Weighted spherical (Karcher) mean of ``points`` with shape ``(m, k, 3)``.

        Weights are affine (sum to one) and may be negative.
        """
        points = self.closest_point(points) / self.radius
        w = np.asarray(weights, dtype=float)
        mean = self.closest_point(np.einsum("k,mkj->mj", w, points)) / self.radius
        for _ in range(max_iter):
            cos = np.clip(np.einsum("mkj,mj->mk", points, mean), -1.0, 1.0)
            tang = points - cos[..., None] * mean[:, None, :]
            tnorm = _norm(tang)
            scale = np.divide(np.arccos(cos), tnorm, out=np.zeros_like(tnorm), where=tnorm > 0)
            step = np.einsum("k,mk,mkj->mj", w, scale, tang)
            size = _norm(step)
            mean = np.cos(size)[:, None] * mean + np.sinc(size / np.pi)[:, None] * step
            mean /= _norm(mean)[:, None]
            if np.max(size) < tol:
                break
        return self.radius * mean

    def principal_frame(self, q):
        """Unit normal and principal directions/curvatures at surface points ``q``.

        Returns ``(n, t1, t2, k1, k2)``; curvatures are positive for the outward
        normal of a convex surface.
        """
        q = np.asarray(q, dtype=float)
        n = q / _norm(q)[..., None]
        # any orthonormal tangent pair will do since the sphere is umbilic
        helper = np.where(np.abs(n[..., :1]) < 0.9, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        t1 = np.cross(n, helper)
        t1 /= _norm(t1)[..., None]
        t2 = np.cross(n, t1)
        k = np.full(n.shape[:-1], 1.0 / self.radius)
        return n, t1, t2, k, k


@dataclass(frozen=True)
class Torus:
    """Torus of revolution about the y axis.

    Points are ``((R + r cos t) cos p, r sin t, (R + r cos t) sin p)`` for
    major radius ``R`` and minor radius ``r``.
    """

    major_radius: float = 2.0
    minor_radius: float = 0.5
    kind = "torus"

    def __post_init__(self):
        if not 0 < self.minor_radius < self.major_radius:
            raise ValueError(
                "torus radii must satisfy 0 < r < R, got "
                f"R={self.major_radius}, r={self.minor_radius}"
            )

    @property
    def tube_width(self) -> float:
        return self.minor_radius

    @property
    def area(self) -> float:
        return 4.0 * np.pi**2 * self.major_radius * self.minor_radius

    @property
    def euler_characteristic(self) -> int:
        return 0

    def _decompose(self, p):
        """Distance to the y axis, point on the centre circle, offset from it."""
        R = self.major_radius
        rho = np.hypot(p[..., 0], p[..., 2])
        if np.any(rho <= 1e-14 * R):
            raise DegeneratePoint("points on the torus axis have no unique closest point")
        centre = np.stack(
            [R * p[..., 0] / rho, np.zeros_like(rho), R * p[..., 2] / rho], axis=-1
        )
        offset = p - centre
        dist = _norm(offset)
        if np.any(dist <= 1e-14 * R):
            raise DegeneratePoint("points on the centre circle have no unique closest point")
        return rho, centre, offset, dist

    def signed_distance(self, p):
        p = np.asarray(p, dtype=float)
        rho = np.hypot(p[..., 0], p[..., 2])
        return np.hypot(rho - self.major_radius, p[..., 1]) - self.minor_radius

    def normal(self, p):
        p = np.asarray(p, dtype=float)
        _, _, offset, dist = self._decompose(p)
        return offset / dist[..., None]

    def closest_point(self, p):
        p = np.asarray(p, dtype=float)
        _, centre, offset, dist = self._decompose(p)
        return centre + self.minor_radius * offset / dist[..., None]

    def angles(self, q):
        """Return ``(theta, phi)`` of surface points, both in ``[0, 2 pi)``."""
        q = np.asarray(q, dtype=float)
        phi = np.mod(np.arctan2(q[..., 2], q[..., 0]), 2 * np.pi)
        rho = np.hypot(q[..., 0], q[..., 2])
        theta = np.mod(np.arctan2(q[..., 1], rho - self.major_radius), 2 * np.pi)
        return theta, phi

    def point(self, theta, phi):
        R, r = self.major_radius, self.minor_radius
        ring = R + r * np.cos(theta)
        return np.stack([ring * np.cos(phi), r * np.sin(theta), ring * np.sin(phi)], axis=-1)

    def weighted_average(self, points, weights):
        """Affine average of ``(m, k, 3)`` surface points in angle coordinates."""
        theta, phi = self.angles(self.closest_point(points))
        w = np.asarray(weights, dtype=float)

        def unwrap(a):
            # shift every angle to within pi of the first one
            return a[:, :1] + np.mod(a - a[:, :1] + np.pi, 2 * np.pi) - np.pi

        return self.point(unwrap(theta) @ w, unwrap(phi) @ w)

    def principal_frame(self, q):
        q = np.asarray(q, dtype=float)
        R, r = self.major_radius, self.minor_radius
        theta, phi = self.angles(q)
        ct, st = np.cos(theta), np.sin(theta)
        cp, sp = np.cos(phi), np.sin(phi)
        n = np.stack([ct * cp, st, ct * sp], axis=-1)
        # toroidal and poloidal unit tangents
        t1 = np.stack([-sp, np.zeros_like(sp), cp], axis=-1)
        t2 = np.stack([-st * cp, ct, -st * sp], axis=-1)
        k1 = ct / (R + r * ct)
        k2 = np.full_like(k1, 1.0 / r)
        return n, t1, t2, k1, k2


AnalyticSurface = Sphere | Torus


def check_in_tube(surface, p):
    """Raise :class:`DegeneratePoint` if ``p`` is too far from the surface."""
    d = surface.signed_distance(p)
    width = TUBE_FRACTION * surface.tube_width
    if np.any(np.abs(d) >= width):
        raise DegeneratePoint(
            f"point at distance {np.max(np.abs(d)):.3g} is outside the tubular "
            f"neighbourhood of width {width:.3g}"
        )
    return d


def signed_distance(surface, p):
    return surface.signed_distance(p)


def closest_point(surface, p):
    return surface.closest_point(p)


def projection_jacobian(surface, p):
    """Differential of the closest-point map at ``p``, shape ``(..., 3, 3)``.

    In the principal frame of the foot point the map contracts tangent
    direction ``i`` by ``1 / (1 + d k_i)`` and kills the normal direction.
    """
    p = np.asarray(p, dtype=float)
    d = check_in_tube(surface, p)
    q = surface.closest_point(p)
    _, t1, t2, k1, k2 = surface.principal_frame(q)
    a1 = (1.0 / (1.0 + d * k1))[..., None, None]
    a2 = (1.0 / (1.0 + d * k2))[..., None, None]
    return a1 * t1[..., :, None] * t1[..., None, :] + a2 * t2[..., :, None] * t2[..., None, :]


def bilinear_chart(corners, uv):
    """Point and tangent vectors of the bilinear map of a quad.

    ``corners`` has shape ``(4, 3)`` (or ``(m, 4, 3)``) ordered counter-clockwise
    and ``uv`` has shape ``(q, 2)`` in the unit square. Returns ``x, x_u, x_v``
    with shape ``(..., q, 3)``.
    """
    corners = np.asarray(corners, dtype=float)
    u = uv[:, 0][:, None]
    v = uv[:, 1][:, None]
    c0 = corners[..., 0:1, :]
    c1 = corners[..., 1:2, :]
    c2 = corners[..., 2:3, :]
    c3 = corners[..., 3:4, :]
    x = (1 - u) * (1 - v) * c0 + u * (1 - v) * c1 + u * v * c2 + (1 - u) * v * c3
    xu = (1 - v) * (c1 - c0) + v * (c2 - c3)
    xv = (1 - u) * (c3 - c0) + u * (c2 - c1)
    return x, xu, xv


def area_ratio_from_tangents(surface, x, xu, xv):
    """Area ratio of the lifted chart to the flat chart from its tangents."""
    J = projection_jacobian(surface, x)
    lu = np.einsum("...ij,...j->...i", J, xu)
    lv = np.einsum("...ij,...j->...i", J, xv)
    return _norm(np.cross(lu, lv)) / _norm(np.cross(xu, xv))


def area_ratio(surface, corners, uv):
    """Area ratio between the surface and a bilinear quad at reference points.

    Parameters
    ----------
    surface : Sphere or Torus
    corners : array (4, 3) or (m, 4, 3)
        Quad vertices in counter-clockwise order.
    uv : array (q, 2)
        Reference coordinates in ``[0, 1]^2``.

    Returns
    -------
    sigma : array (q,) or (m, q)
        Ratio of the area element of the lifted chart to that of the quad.
    """
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    x, xu, xv = bilinear_chart(corners, uv)
    return area_ratio_from_tangents(surface, x, xu, xv)
