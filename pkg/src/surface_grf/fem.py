"""Bilinear surface finite elements on quadrilateral meshes.

Each quad is parametrised by the bilinear map of its four corners over the
unit square, so non-planar quads are handled through their first fundamental
form. Matrices are returned as ``scipy.sparse`` CSR matrices.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import NoConvergence, NotPositiveDefinite
from .geometry import area_ratio_from_tangents, bilinear_chart

# Gauss order for polynomial integrands and for anything involving sigma or lifts.
LOW_ORDER = 2
HIGH_ORDER = 4
_CHUNK = 2048

# reference corners (0,0), (1,0), (1,1), (0,1)
_REF = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


@lru_cache(maxsize=None)
def gauss_square(order: int):
    """Tensor Gauss points and weights on the unit square."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    uv = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)
    ww = np.outer(w, w).ravel()
    return uv, ww


def shape_functions(uv):
    """Q1 basis values ``(q, 4)`` and reference gradients ``(q, 4, 2)``."""
    u, v = uv[:, :1], uv[:, 1:]
    su = np.where(_REF[:, 0] == 1.0, u, 1.0 - u)
    sv = np.where(_REF[:, 1] == 1.0, v, 1.0 - v)
    du = np.where(_REF[:, 0] == 1.0, 1.0, -1.0)
    dv = np.where(_REF[:, 1] == 1.0, 1.0, -1.0)
    phi = su * sv
    grad = np.stack([du * sv, su * dv], axis=-1)
    return phi, grad


@dataclass
class _Block:
    """Geometry of a batch of quads at the quadrature points."""

    ids: np.ndarray  # (m, 4) vertex ids
    x: np.ndarray  # (m, q, 3)
    xu: np.ndarray
    xv: np.ndarray
    dA: np.ndarray  # (m, q) weight times area element


def _blocks(mesh, order):
    uv, w = gauss_square(order)
    for start in range(0, mesh.n_faces, _CHUNK):
        ids = mesh.quads[start:start + _CHUNK]
        x, xu, xv = bilinear_chart(mesh.vertices[ids], uv)
        area = np.linalg.norm(np.cross(xu, xv), axis=-1)
        yield _Block(ids, x, xu, xv, area * w)


def _scatter(mesh, ids_list, local_list):
    ids = np.concatenate(ids_list)
    local = np.concatenate(local_list)
    rows = np.repeat(ids, 4, axis=1).ravel()
    cols = np.tile(ids, (1, 4)).ravel()
    n = mesh.n_vertices
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat


def _mass(mesh, order, weighted):
    uv, _ = gauss_square(order)
    phi, _ = shape_functions(uv)
    ids, loc = [], []
    for b in _blocks(mesh, order):
        dA = b.dA
        if weighted:
            dA = dA * area_ratio_from_tangents(mesh.surface, b.x, b.xu, b.xv)
        loc.append(np.einsum("mq,qa,qb->mab", dA, phi, phi))
        ids.append(b.ids)
    mat = _scatter(mesh, ids, loc)
    return 0.5 * (mat + mat.T)


def assemble_mass(mesh, order: int = LOW_ORDER):
    """Mass matrix ``M_ij = int_Gamma phi_i phi_j``."""
    return _mass(mesh, order, weighted=False)


def assemble_weighted_mass(mesh, order: int = HIGH_ORDER):
    """Mass matrix weighted by the area ratio ``sigma``; the white-noise covariance."""
    return _mass(mesh, order, weighted=True)


def assemble_stiffness(mesh, order: int = LOW_ORDER):
    """Stiffness matrix ``A_ij = int_Gamma grad phi_i . grad phi_j``."""
    uv, _ = gauss_square(order)
    _, dphi = shape_functions(uv)
    ids, loc = [], []
    for b in _blocks(mesh, order):
        g11 = np.einsum("mqi,mqi->mq", b.xu, b.xu)
        g12 = np.einsum("mqi,mqi->mq", b.xu, b.xv)
        g22 = np.einsum("mqi,mqi->mq", b.xv, b.xv)
        det = g11 * g22 - g12 * g12
        ginv = np.stack(
            [np.stack([g22, -g12], -1), np.stack([-g12, g11], -1)], -2
        ) / det[..., None, None]
        loc.append(np.einsum("mq,qai,mqij,qbj->mab", b.dA, dphi, ginv, dphi))
        ids.append(b.ids)
    mat = _scatter(mesh, ids, loc)
    return 0.5 * (mat + mat.T)


def quadrature_points(mesh, order: int = HIGH_ORDER):
    """Flattened quadrature data over the whole mesh.

    Returns ``(x, dA, sigma, ids, phi)``: points on the discrete surface,
    weighted area elements, area ratio, element vertex ids ``(F, 4)`` and the
    basis values ``(q, 4)``; ``x``, ``dA`` and ``sigma`` have shape ``(F, q)``.
    """
    uv, _ = gauss_square(order)
    phi, _ = shape_functions(uv)
    xs, dAs, sig = [], [], []
    for b in _blocks(mesh, order):
        xs.append(b.x)
        dAs.append(b.dA)
        sig.append(area_ratio_from_tangents(mesh.surface, b.x, b.xu, b.xv))
    return np.concatenate(xs), np.concatenate(dAs), np.concatenate(sig), mesh.quads, phi


def project_function(mesh, f, order: int = HIGH_ORDER):
    """Load vector ``b_i = int_Gamma sigma (f o P) phi_i`` for ``f`` defined on the surface.

    ``f`` maps an array of surface points ``(..., 3)`` to values ``(...)`` or
    ``(..., k)``; in the latter case the result has shape ``(N, k)``.
    """
    x, dA, sigma, ids, phi = quadrature_points(mesh, order)
    vals = np.asarray(f(mesh.surface.closest_point(x)), dtype=float)
    weights = (dA * sigma)[:, :, None] * phi[None, :, :]  # (F, q, 4)
    if vals.ndim == 2:
        local = np.einsum("mqa,mq->ma", weights, vals)
        return np.bincount(ids.ravel(), local.ravel(), minlength=mesh.n_vertices)
    local = np.einsum("mqa,mqk->mak", weights, vals)
    out = np.zeros((mesh.n_vertices, vals.shape[-1]))
    np.add.at(out, ids.ravel(), local.reshape(-1, vals.shape[-1]))
    return out


def l2_norm(mass, u) -> float:
    """Discrete L2 norm ``sqrt(u^T M u)``."""
    u = np.asarray(u, dtype=float)
    return float(np.sqrt(u @ (mass @ u)))


def l2_error_vs_function(mesh, u, f, order: int = HIGH_ORDER) -> float:
    """``|| sum_i u_i phi_i - f o P ||_{L2(Gamma)}`` by Gauss quadrature."""
    x, dA, _, ids, phi = quadrature_points(mesh, order)
    uh = np.einsum("qa,ma->mq", phi, np.asarray(u, dtype=float)[ids])
    diff = uh - np.asarray(f(mesh.surface.closest_point(x)), dtype=float)
    return float(np.sqrt(np.sum(dA * diff**2)))


class CholeskyFactor:
    """Sparse Cholesky factor ``G`` with ``G G^T = A[perm][:, perm]``.

    Computed with SuperLU under a symmetric minimum-degree ordering and
    without pivoting, which for an SPD matrix makes ``U = D L^T``.
    """

    def __init__(self, A, ordering: str = "MMD_AT_PLUS_A"):
        A = sp.csc_matrix(A)
        n = A.shape[0]
        if n == 1:
            a = A.toarray()[0, 0]
            if not a > 0:
                raise NotPositiveDefinite(f"pivot {a} is not positive")
            self.perm = np.zeros(1, dtype=int)
            self.G = sp.csc_matrix([[np.sqrt(a)]])
            self._lu = None
            self._scalar = a
            return
        try:
            lu = spla.splu(
                A,
                permc_spec=ordering,
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as err:
            raise NotPositiveDefinite(str(err)) from err
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NotPositiveDefinite("factorisation pivoted; matrix is not SPD")
        d = lu.U.diagonal()
        if np.any(d <= 0):
            raise NotPositiveDefinite(f"non-positive pivot {d.min():.3g}")
        # perm_c maps original column j to position perm_c[j]
        self.perm = np.argsort(lu.perm_c)
        self.G = sp.csc_matrix(lu.L @ sp.diags(np.sqrt(d)))
        self._lu = lu

    @property
    def shape(self):
        return self.G.shape

    def reconstruction_error(self, A) -> float:
        """``max |G G^T - P A P^T| / max |A|``."""
        A = sp.csr_matrix(A)
        PAP = A[self.perm][:, self.perm]
        diff = (self.G @ self.G.T - PAP).tocoo()
        scale = np.max(np.abs(A.data))
        return float(np.max(np.abs(diff.data), initial=0.0) / scale)

    def correlate(self, z):
        """Map standard normal vectors (columns of ``z``) to ``N(0, A)`` vectors."""
        z = np.asarray(z, dtype=float)
        out = np.empty_like(z)
        out[self.perm] = self.G @ z
        return out

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self._lu is None:
            return b / self._scalar
        return self._lu.solve(b)


def cholesky(A) -> CholeskyFactor:
    return CholeskyFactor(A)


def shifted_matrix(mass, stiffness, kappa: float, mu: float):
    return ((mu + kappa**2) * mass + stiffness).tocsc()


def solve_shifted(mass, stiffness, kappa, mu, b, method="cg", rtol=1e-10, maxiter=None):
    """Solve ``((mu + kappa^2) M + A) u = b``.

    ``method="cg"`` uses Jacobi-preconditioned conjugate gradients,
    ``method="direct"`` a sparse factorisation.
    """
    if not (mu > 0 or kappa > 0):
        raise ValueError("need mu > 0 or kappa > 0 for an SPD system")
    K = shifted_matrix(mass, stiffness, kappa, mu)
    b = np.asarray(b, dtype=float)
    if method == "direct":
        return spla.splu(K, permc_spec="MMD_AT_PLUS_A").solve(b)
    if not np.any(b):
        return np.zeros_like(b)
    n = K.shape[0]
    jacobi = sp.diags(1.0 / K.diagonal())
    u, info = spla.cg(K, b, rtol=rtol, atol=0.0, M=jacobi, maxiter=maxiter or 10 * n)
    if info != 0:
        raise NoConvergence(f"CG did not converge in {maxiter or 10 * n} iterations")
    return u


def smallest_eigenpairs(stiffness, mass, kappa: float, m: int, return_vectors=False):
    """Smallest ``m`` eigenvalues of the pencil ``(kappa^2 M + A) x = lam M x``.

    Uses shift-invert Lanczos around zero; falls back to a dense solver for tiny
    matrices.
    """
    if m > 20:
        raise ValueError("eigen diagnostics are limited to m <= 20")
    K = (kappa**2 * mass + stiffness).tocsc()
    n = K.shape[0]
    if n <= max(2 * m + 1, 50):
        from scipy.linalg import eigh

        lam, vec = eigh(K.toarray(), mass.toarray())
        lam, vec = lam[:m], vec[:, :m]
    else:
        # extra pairs so that no copy of a degenerate cluster is missed at the cut
        want = min(n - 2, 2 * m + 10)
        try:
            lam, vec = spla.eigsh(K, k=want, M=mass.tocsc(), sigma=0.0, which="LM", tol=1e-14)
        except spla.ArpackNoConvergence as err:
            raise NoConvergence(str(err)) from err
        order = np.argsort(lam)[:m]
        lam, vec = lam[order], vec[:, order]
    return (lam, vec) if return_vectors else lam
