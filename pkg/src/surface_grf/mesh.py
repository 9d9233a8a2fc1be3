"""Quadrilateral polyhedral surfaces with vertices on an exact surface."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ProjectionFailure
from .geometry import TUBE_FRACTION, Sphere, Torus, area_ratio

TORUS_BASE_SHAPE = (20, 4)


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Quad mesh approximating ``surface``.

    Attributes
    ----------
    vertices : ndarray (N, 3)
    quads : ndarray (F, 4)
        Vertex ids, counter-clockwise when seen from outside.
    level : int
        Number of uniform refinements applied to the base mesh.
    surface : Sphere or Torus
    """

    vertices: np.ndarray
    quads: np.ndarray
    surface: Sphere | Torus
    level: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.quads)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs, shape ``(E, 2)``."""
        if "edges" not in self._cache:
            e = _quad_edges(self.quads).reshape(-1, 2)
            self._cache["edges"] = np.unique(np.sort(e, axis=1), axis=0)
        return self._cache["edges"]

    @property
    def n_edges(self) -> int:
        return len(self.edges())

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def corners(self) -> np.ndarray:
        return self.vertices[self.quads]

    def h(self) -> float:
        return mesh_size(self)

    def e_sigma(self, samples: int = 5) -> float:
        return sigma_sup_error(self, samples)

    def validate(self, tol: float = 1e-10) -> None:
        """Check the closed-mesh invariants, raising ``ValueError`` on failure."""
        d = self.surface.signed_distance(self.vertices)
        if np.max(np.abs(d)) > tol:
            raise ValueError(f"vertex off the surface by {np.max(np.abs(d)):.3g}")
        directed = _quad_edges(self.quads).reshape(-1, 2)
        # each directed edge must appear exactly once and its reverse exactly once
        keys = directed[:, 0] * self.n_vertices + directed[:, 1]
        rev = directed[:, 1] * self.n_vertices + directed[:, 0]
        if len(np.unique(keys)) != len(keys):
            raise ValueError("inconsistent orientation: repeated directed edge")
        if not np.array_equal(np.sort(keys), np.sort(rev)):
            raise ValueError("mesh is not closed: boundary edge found")
        if self.euler_characteristic != self.surface.euler_characteristic:
            raise ValueError(f"Euler characteristic {self.euler_characteristic}")
        c = self.corners()
        centre = c.mean(axis=1)
        nrm = np.cross(c[:, 2] - c[:, 0], c[:, 3] - c[:, 1])
        outward = np.einsum("ij,ij->i", nrm, self.surface.normal(centre))
        if np.any(outward <= 0):
            raise ValueError("quad with non-positive area or inward orientation")


def _quad_edges(quads):
    return np.stack([quads, np.roll(quads, -1, axis=1)], axis=-1)


def _cube_sphere(surface: Sphere) -> SurfaceMesh:
    s = surface.radius / np.sqrt(3.0)
    verts = np.array(
        [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float
    ) * s
    # index = 4*(x>0) + 2*(y>0) + (z>0); faces counter-clockwise from outside
    quads = np.array(
        [
            [0, 1, 3, 2],  # x = -1
            [4, 6, 7, 5],  # x = +1
            [0, 4, 5, 1],  # y = -1
            [2, 3, 7, 6],  # y = +1
            [0, 2, 6, 4],  # z = -1
            [1, 5, 7, 3],  # z = +1
        ]
    )
    return SurfaceMesh(verts, quads, surface, 0)


def _torus_grid(surface: Torus, n_phi: int, n_theta: int) -> SurfaceMesh:
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    P, T = np.meshgrid(phi, theta, indexing="ij")
    verts = surface.point(T, P).reshape(-1, 3)
    i, j = np.meshgrid(np.arange(n_phi), np.arange(n_theta), indexing="ij")
    i1, j1 = (i + 1) % n_phi, (j + 1) % n_theta
    idx = lambda a, b: (a * n_theta + b).ravel()  # noqa: E731
    # (phi, theta) increasing is inward-facing for this parametrisation
    quads = np.stack([idx(i, j), idx(i, j1), idx(i1, j1), idx(i1, j)], axis=1)
    return SurfaceMesh(verts, quads, surface, 0)


def base_mesh(surface) -> SurfaceMesh:
    """Initial coarse mesh: inscribed cube for the sphere, 20 x 4 grid for the torus."""
    if isinstance(surface, Sphere):
        return _cube_sphere(surface)
    if isinstance(surface, Torus):
        return _torus_grid(surface, *TORUS_BASE_SHAPE)
    raise TypeError(f"unsupported surface {surface!r}")


# Face centres average the corners and edge midpoints with transfinite weights.
_CENTRE_WEIGHTS = np.array([-0.25] * 4 + [0.5] * 4)


def _new_points(surface, points, weights):
    """Intrinsic weighted average of groups of surface points, checked against the tube."""
    chord = np.einsum("k,mkj->mj", weights, points)
    d = surface.signed_distance(chord)
    if np.any(np.abs(d) >= TUBE_FRACTION * surface.tube_width):
        raise ProjectionFailure("refined vertex left the tubular neighbourhood")
    new = surface.weighted_average(points, weights)
    if np.max(np.abs(surface.signed_distance(new)), initial=0.0) > 1e-10:
        raise ProjectionFailure("refined vertex is off the surface")
    return new


def refine(mesh: SurfaceMesh) -> SurfaceMesh:
    """Split every quad into four with new vertices placed on the surface.

    Edge midpoints are intrinsic midpoints of the edge end points (geodesic
    midpoints on the sphere, parameter midpoints on the torus); face centres
    are intrinsic averages of the corners and edge midpoints.
    """
    V, Q = mesh.vertices, mesh.quads
    nv = len(V)
    edges = mesh.edges()
    # map each quad edge to its unique edge id
    key = edges[:, 0] * nv + edges[:, 1]
    qe = np.sort(_quad_edges(Q), axis=-1)
    qkey = qe[..., 0] * nv + qe[..., 1]
    eid = np.searchsorted(key, qkey)
    edge_mid = _new_points(mesh.surface, V[edges], np.array([0.5, 0.5]))
    face_mid = _new_points(
        mesh.surface, np.concatenate([V[Q], edge_mid[eid]], axis=1), _CENTRE_WEIGHTS
    )
    verts = np.concatenate([V, edge_mid, face_mid])
    e = nv + eid  # (F, 4): edge k joins corner k and k+1
    c = nv + len(edges) + np.arange(len(Q))
    quads = np.concatenate(
        [
            np.stack([Q[:, 0], e[:, 0], c, e[:, 3]], axis=1),
            np.stack([e[:, 0], Q[:, 1], e[:, 1], c], axis=1),
            np.stack([c, e[:, 1], Q[:, 2], e[:, 2]], axis=1),
            np.stack([e[:, 3], c, e[:, 2], Q[:, 3]], axis=1),
        ]
    )
    return SurfaceMesh(verts, quads, mesh.surface, mesh.level + 1)


def make_mesh(surface, level: int) -> SurfaceMesh:
    """Base mesh refined ``level`` times."""
    if level < 0:
        raise ValueError(f"refinement level must be non-negative, got {level}")
    mesh = base_mesh(surface)
    for _ in range(level):
        mesh = refine(mesh)
    return mesh


def mesh_size(mesh: SurfaceMesh) -> float:
    """Largest quad diameter, taken over all vertex pairs including diagonals."""
    c = mesh.corners()
    diff = c[:, :, None, :] - c[:, None, :, :]
    return float(np.sqrt(np.max(np.sum(diff**2, axis=-1))))


def sigma_sup_error(mesh: SurfaceMesh, samples: int = 5) -> float:
    """Sup of ``|1 - sigma|`` on a ``samples x samples`` grid per quad (corners included)."""
    t = np.linspace(0.0, 1.0, samples)
    uv = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    sup = 0.0
    corners = mesh.corners()
    for start in range(0, len(corners), 4096):
        sig = area_ratio(mesh.surface, corners[start:start + 4096], uv)
        sup = max(sup, float(np.max(np.abs(1.0 - sig))))
    return sup
