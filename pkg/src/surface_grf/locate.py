"""Locating surface points in a quad mesh and Q1 interpolation there."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import PointLocationFailure
from .fem import shape_functions
from .geometry import bilinear_chart

_NEIGHBOURS = 8
_NEWTON_STEPS = 30
_INSIDE_TOL = 1e-9


class PointLocator:
    """Find the quad whose closest-point image contains a given surface point.

    For a point ``p`` on the exact surface, a quad contains it when some
    ``(u, v)`` in the unit square maps to ``x(u, v)`` with ``x - p`` normal
    to the surface at ``p``. Candidates are quads touching the vertices
    nearest to ``p``.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        self._tree = cKDTree(mesh.vertices)
        nq = mesh.n_faces
        owner = np.repeat(np.arange(nq), 4)
        order = np.argsort(mesh.quads.ravel(), kind="stable")
        self._incident = owner[order]
        self._start = np.searchsorted(mesh.quads.ravel()[order], np.arange(mesh.n_vertices + 1))

    def _candidates(self, p):
        k = min(_NEIGHBOURS, self.mesh.n_vertices)
        _, near = self._tree.query(p, k=k)
        quads = [self._incident[self._start[v]:self._start[v + 1]] for v in np.atleast_1d(near)]
        return np.unique(np.concatenate(quads))

    def _solve(self, corners, p, t1, t2):
        uv = np.array([0.5, 0.5])
        for _ in range(_NEWTON_STEPS):
            x, xu, xv = bilinear_chart(corners, uv[None, :])
            r = x[0] - p
            F = np.array([t1 @ r, t2 @ r])
            J = np.array([[t1 @ xu[0], t1 @ xv[0]], [t2 @ xu[0], t2 @ xv[0]]])
            try:
                step = np.linalg.solve(J, F)
            except np.linalg.LinAlgError:
                return None
            uv = uv - step
            if np.max(np.abs(step)) < 1e-14:
                break
            if np.max(np.abs(uv)) > 10.0:
                return None
        return uv

    def locate(self, p):
        """Return ``(quad_id, (u, v))`` for a point ``p`` on the surface."""
        p = np.asarray(p, dtype=float)
        surface = self.mesh.surface
        if abs(float(surface.signed_distance(p))) > 1e-8:
            raise PointLocationFailure(f"point {p} is not on the surface")
        n, t1, t2, _, _ = surface.principal_frame(p)
        for q in self._candidates(p):
            uv = self._solve(self.mesh.vertices[self.mesh.quads[q]], p, t1, t2)
            if uv is None:
                continue
            if np.all(uv >= -_INSIDE_TOL) and np.all(uv <= 1 + _INSIDE_TOL):
                x, _, _ = bilinear_chart(self.mesh.vertices[self.mesh.quads[q]], uv[None, :])
                # reject a hit on a far sheet of the surface
                if np.linalg.norm(x[0] - p) < 0.5 * surface.tube_width:
                    return int(q), np.clip(uv, 0.0, 1.0)
        raise PointLocationFailure(f"no quad brackets the point {p}")

    def weights(self, points):
        """Sparse interpolation data: vertex ids ``(P, 4)`` and Q1 weights ``(P, 4)``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        ids = np.empty((len(points), 4), dtype=int)
        w = np.empty((len(points), 4))
        for i, p in enumerate(points):
            q, uv = self.locate(p)
            phi, _ = shape_functions(uv[None, :])
            ids[i] = self.mesh.quads[q]
            w[i] = phi[0]
        return ids, w


def interpolate(mesh, values, points) -> np.ndarray:
    """Q1 interpolant of nodal ``values`` (``(N,)`` or ``(N, k)``) at surface points."""
    ids, w = PointLocator(mesh).weights(points)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return np.einsum("pa,pa->p", w, values[ids])
    return np.einsum("pa,pak->pk", w, values[ids])
