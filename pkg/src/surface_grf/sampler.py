"""Sinc-quadrature sampler for Whittle-Matern fields on closed surfaces.

A realisation is ``U = sum_l w_l ((e^{y_l} + kappa^2) M + A)^{-1} alpha`` where
``alpha ~ N(0, M_sigma)`` is the white-noise data vector and ``w_l``, ``y_l``
are sinc quadrature weights and nodes for ``lambda^{-s}``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import fem
from .exceptions import InvalidFraction
from .mesh import SurfaceMesh
from .rng import standard_normal, standard_normal_block

DEFAULT_SPACING = 0.6
# Largest mesh for which the dense eigendecomposition route is used by default.
SPECTRAL_MAX_DOFS = 7000
THREADS_ENV = "SURFACE_GRF_THREADS"


def n_threads(requested=None) -> int:
    """Worker count from the argument, then the environment, defaulting to 1."""
    if requested is None:
        requested = os.environ.get(THREADS_ENV, 1)
    return max(1, int(requested))


@dataclass(frozen=True)
class SincScheme:
    """Sinc quadrature for ``lambda^{-s}`` on the log-transformed Balakrishnan integral.

    Parameters
    ----------
    s : float
        Fractional power, in the open interval ``((n - 1) / 4, 1)``.
    kappa : float
        Reaction coefficient, positive.
    n : int
        Ambient dimension (2 for curves, 3 for surfaces).
    k : float
        Quadrature spacing.
    """

    s: float
    kappa: float
    n: int = 3
    k: float = DEFAULT_SPACING

    def __post_init__(self):
        lower = (self.n - 1) / 4
        if self.n not in (2, 3):
            raise ValueError(f"ambient dimension must be 2 or 3, got {self.n}")
        if not lower < self.s < 1:
            raise InvalidFraction(f"s={self.s} must lie in ({lower}, 1) for n={self.n}")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.k > 0:
            raise ValueError("quadrature spacing must be positive")

    @property
    def n_plus(self) -> int:
        """Number of positive nodes."""
        return math.ceil(2 * math.pi**2 / ((self.s - (self.n - 1) / 4) * self.k**2))

    @property
    def n_minus(self) -> int:
        """Number of negative nodes."""
        return math.ceil(math.pi**2 / ((1 - self.s) * self.k**2))

    @property
    def n_nodes(self) -> int:
        return self.n_plus + self.n_minus + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.k * np.arange(-self.n_minus, self.n_plus + 1)

    @property
    def shifts(self) -> np.ndarray:
        """``e^{y_l}``; overflows to ``inf`` for very large nodes, see :meth:`terms`."""
        with np.errstate(over="ignore"):
            return np.exp(self.nodes)

    @property
    def weights(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.k * math.sin(math.pi * self.s) / math.pi * np.exp((1 - self.s) * self.nodes)

    def terms(self):
        """Overflow-free node data ``(a_l, b_l, c_l)``.

        Each quadrature term ``w_l / (e^{y_l} + lam)`` equals
        ``c_l / (a_l + b_l lam)`` with ``a_l = 1, b_l = e^{-y_l}`` for
        ``y_l >= 0`` and ``a_l = e^{y_l}, b_l = 1`` otherwise.
        """
        y = self.nodes
        front = self.k * math.sin(math.pi * self.s) / math.pi
        pos = y >= 0
        a = np.where(pos, 1.0, np.exp(np.minimum(y, 0.0)))
        b = np.where(pos, np.exp(-np.maximum(y, 0.0)), 1.0)
        c = front * np.where(pos, np.exp(-self.s * np.maximum(y, 0.0)),
                             np.exp((1 - self.s) * np.minimum(y, 0.0)))
        return a, b, c

    @property
    def error_scale(self) -> float:
        return math.exp(-math.pi**2 / self.k)

    def scalar(self, lam):
        """Quadrature approximation of ``lam^{-s}``, vectorised over ``lam``."""
        lam = np.asarray(lam, dtype=float)
        out = np.zeros_like(lam)
        for a, b, c in zip(*self.terms()):
            out += c / (a + b * lam)
        return out


def build_scheme(s, kappa, n=3, k=DEFAULT_SPACING) -> SincScheme:
    return SincScheme(s, kappa, n, k)


def scalar_sinc(scheme: SincScheme, lam):
    return scheme.scalar(lam)


def eigen_weak_norm(eigenvalues, scheme: SincScheme) -> float:
    """Mean-square norm ``sum_j Q(Lambda_j)^2`` of the sampler in its eigenbasis."""
    return float(np.sum(scheme.scalar(np.asarray(eigenvalues, dtype=float)) ** 2))


class FactorizedOperator:
    """``Q(L_T)`` applied node by node with sparse factorisations of the shifted systems.

    Factorisations are kept when ``cache`` is true, so repeated applications
    only pay for triangular solves.
    """

    def __init__(self, scheme: SincScheme, mass, stiffness, cache: bool = True):
        self.scheme = scheme
        self.mass = mass.tocsc()
        self.stiffness = stiffness.tocsc()
        self.cache = cache
        self._factors: dict[int, object] = {}
        self._terms = scheme.terms()
        self._operator = (scheme.kappa**2 * self.mass + self.stiffness).tocsc()

    def _factor(self, l):
        if l in self._factors:
            return self._factors[l]
        a, b, _ = self._terms
        # a_l M + b_l (kappa^2 M + A) is the shifted matrix scaled by b_l
        K = (a[l] * self.mass + b[l] * self._operator).tocsc()
        lu = spla.splu(
            K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
        if self.cache:
            self._factors[l] = lu
        return lu

    def apply(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        out = np.zeros_like(rhs)
        if not np.any(rhs):
            return out
        for l, c in enumerate(self._terms[2]):
            out += c * self._factor(l).solve(rhs)
        return out


@dataclass(frozen=True)
class PencilEigen:
    """Full generalized eigendecomposition ``A V = M V diag(mu)`` with ``V^T M V = I``.

    Independent of ``kappa``: the pencil ``kappa^2 M + A`` has eigenvalues
    ``kappa^2 + mu`` and the same eigenvectors, so one decomposition serves
    every parameter pair on a mesh.
    """

    mu: np.ndarray
    vectors: np.ndarray

    @classmethod
    def compute(cls, mass, stiffness):
        mu, vec = sla.eigh(stiffness.toarray(), mass.toarray(), driver="gvd",
                           overwrite_a=True, overwrite_b=True)
        return cls(mu, vec)


class SpectralOperator:
    """``Q(L_T)`` through the generalized eigendecomposition ``K V = M V Lambda``.

    With ``V^T M V = I`` every shifted inverse is ``V (mu + Lambda)^{-1} V^T``,
    so the quadrature sum collapses to ``V diag(Q(Lambda)) V^T``. Same operator
    as :class:`FactorizedOperator`, cheaper for many right-hand sides on
    moderate meshes.
    """

    def __init__(self, scheme: SincScheme, mass, stiffness, eigen: PencilEigen | None = None):
        self.scheme = scheme
        if eigen is None:
            eigen = PencilEigen.compute(mass, stiffness)
        self.eigen = eigen
        self.eigenvalues = scheme.kappa**2 + eigen.mu
        self.eigenvectors = eigen.vectors
        self.filter = scheme.scalar(self.eigenvalues)

    def apply(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        coef = self.eigenvectors.T @ rhs
        coef *= self.filter if rhs.ndim == 1 else self.filter[:, None]
        return self.eigenvectors @ coef


def resolve_method(method: str, n_dofs: int) -> str:
    if method == "auto":
        return "spectral" if n_dofs <= SPECTRAL_MAX_DOFS else "factorized"
    if method not in ("spectral", "factorized"):
        raise ValueError(f"unknown method {method!r}")
    return method


def make_operator(scheme, mass, stiffness, method="auto", eigen=None):
    method = resolve_method(method, mass.shape[0])
    if method == "spectral":
        return SpectralOperator(scheme, mass, stiffness, eigen)
    if method == "factorized":
        return FactorizedOperator(scheme, mass, stiffness)
    raise ValueError(f"unknown method {method!r}")


def apply_fractional_inverse(scheme, mass, stiffness, alpha, method="factorized"):
    """Sinc approximation ``U = Q_k^{-s}(L_T) alpha`` for one or more data vectors."""
    return make_operator(scheme, mass, stiffness, method).apply(alpha)


@dataclass
class NoiseSampler:
    """Draws white-noise data vectors ``alpha = G z ~ N(0, M_sigma)``."""

    factor: fem.CholeskyFactor
    seed: int = 0
    tag: str = "noise"

    @property
    def dim(self) -> int:
        return self.factor.shape[0]

    def sample_alpha(self, sample_index: int) -> np.ndarray:
        z = standard_normal(self.seed, sample_index, self.dim, self.tag)
        return self.factor.correlate(z)

    def sample_block(self, indices) -> np.ndarray:
        """Data vectors as columns, shape ``(N, len(indices))``."""
        z = standard_normal_block(self.seed, indices, self.dim, self.tag)
        return self.factor.correlate(z)


def sample_alpha(sampler: NoiseSampler, sample_index: int) -> np.ndarray:
    return sampler.sample_alpha(sample_index)


@dataclass(frozen=True)
class FieldSample:
    """Nodal coefficients of one realisation and the data needed to replay it."""

    coefficients: np.ndarray
    seed: int
    sample_index: int
    params: dict = field(default_factory=dict)


def _check_mesh(mesh):
    if not isinstance(mesh, SurfaceMesh):
        raise TypeError(f"expected a SurfaceMesh, got {type(mesh).__name__}")
    if mesh.n_vertices < 1 or mesh.n_faces < 1:
        raise ValueError("mesh is empty")
    return mesh


class WhittleMaternSampler(TransformerMixin, BaseEstimator):
    """Sample Gaussian Whittle-Matern fields ``(kappa^2 - Delta)^s u = w`` on a surface mesh.

    ``fit`` assembles the finite element matrices of a :class:`SurfaceMesh`
    and factors the white-noise covariance. ``transform`` maps data vectors
    (rows) to nodal field values (rows); ``sample`` draws reproducible
    realisations.

    Parameters
    ----------
    s : float
        Smoothness, in ``((n - 1) / 4, 1)``.
    kappa : float
        Inverse correlation length.
    k : float
        Sinc quadrature spacing.
    method : {"auto", "spectral", "factorized"}
        How the quadrature sum is applied.
    seed : int
        Base seed for the per-sample random streams.
    n_jobs : int or None
        Worker threads for batched sampling; ``None`` reads ``SURFACE_GRF_THREADS``.
    batch_size : int
        Samples per work item. Output is bit-identical for any thread count;
        changing the batch size can change the last bits.
    """

    def __init__(self, s=0.75, kappa=1.0, k=DEFAULT_SPACING, method="auto", seed=0,
                 n_jobs=None, batch_size=64):
        self.s = s
        self.kappa = kappa
        self.k = k
        self.method = method
        self.seed = seed
        self.n_jobs = n_jobs
        self.batch_size = batch_size

    def fit(self, X, y=None):
        mesh = _check_mesh(X)
        self.scheme_ = build_scheme(self.s, self.kappa, 3, self.k)
        self.mesh_ = mesh
        self.mass_ = fem.assemble_mass(mesh)
        self.stiffness_ = fem.assemble_stiffness(mesh)
        self.weighted_mass_ = fem.assemble_weighted_mass(mesh)
        self.noise_ = NoiseSampler(fem.cholesky(self.weighted_mass_), self.seed)
        self.operator_ = make_operator(self.scheme_, self.mass_, self.stiffness_, self.method)
        self.n_features_in_ = mesh.n_vertices
        return self

    def transform(self, X):
        """Apply the fractional solution operator to data vectors (one per row)."""
        check_is_fitted(self, "operator_")
        X = check_array(X, dtype=np.float64, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"data vectors have {X.shape[1]} entries, mesh has {self.n_features_in_} vertices"
            )
        return self.operator_.apply(X.T).T

    def sample_alpha(self, sample_index: int) -> np.ndarray:
        check_is_fitted(self, "noise_")
        return self.noise_.sample_alpha(sample_index)

    def _batch(self, indices):
        return self.operator_.apply(self.noise_.sample_block(indices)).T

    def sample(self, n_samples: int = 1, start: int = 0) -> np.ndarray:
        """Realisations for sample indices ``start, ..., start + n_samples - 1`` (rows)."""
        check_is_fitted(self, "operator_")
        out = np.empty((n_samples, self.n_features_in_))
        # batches are the index blocks [j * batch_size, (j + 1) * batch_size) clipped
        # to the request, so the split never depends on the thread count
        stop = start + n_samples
        size = self.batch_size
        edges = sorted({start, stop, *range((start // size + 1) * size, stop, size)})
        batches = [range(a, b) for a, b in zip(edges, edges[1:])]

        def work(idx):
            out[idx.start - start:idx.stop - start] = self._batch(list(idx))

        workers = n_threads(self.n_jobs)
        if workers == 1 or len(batches) == 1:
            for rows in batches:
                work(rows)
        else:
            with ThreadPoolExecutor(workers) as pool:
                list(pool.map(work, batches))
        return out

    def sample_field(self, sample_index: int = 0) -> FieldSample:
        coef = self.sample(1, start=sample_index)[0]
        params = {"s": self.s, "kappa": self.kappa, "k": self.k, "level": self.mesh_.level,
                  "surface": self.mesh_.surface.kind}
        return FieldSample(coef, self.seed, sample_index, params)
