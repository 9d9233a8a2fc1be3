"""Monte Carlo experiments: strong and weak errors, covariances, convergence slopes.

Every stochastic quantity is accumulated per sample index from that
index's own random substream and reduced in index order, so results do not
depend on batching or on the number of worker threads.
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import fem, spectral
from .exceptions import ConfigError, InvalidFraction
from .geometry import Sphere, Torus
from .io import Table
from .locate import PointLocator
from .mesh import make_mesh
from .rng import standard_normal_block
from .sampler import (
    DEFAULT_SPACING,
    NoiseSampler,
    PencilEigen,
    SpectralOperator,
    build_scheme,
    make_operator,
    n_threads,
    resolve_method,
)

GEOMETRY_COLUMNS = ["N", "h", "e_sigma"]
# L2 over the polyhedral surface, or over the exact surface after lifting
ERROR_NORMS = ("polyhedral", "lifted")
STDERR_WARN_FRACTION = 0.2
# keep cached harmonic values below this many floats
_HARMONIC_CACHE_FLOATS = 60_000_000
_POINT_CHUNK = 2048


@dataclass
class ExperimentConfig:
    """Parameters of a batch experiment.

    Config files hold one ``key = value`` per line; ``#`` starts a comment
    and ``levels`` is a comma-separated list. Unknown keys are an error.
    """

    surface: str = "sphere"
    levels: tuple = (2, 3, 4)
    s: float = 0.75
    kappa: float = 0.5
    k: float = DEFAULT_SPACING
    mc_samples: int = 10_000
    truncation: int = 100
    seed: int = 0
    rhs_order: int | str = 3
    error_norm: str = "polyhedral"
    method: str = "auto"
    batch_size: int = 500
    n_jobs: int | None = None
    control_modes: int = 0
    radius: float = 1.0
    major_radius: float = 2.0
    minor_radius: float = 0.5
    out_csv: str | None = None
    out_vtk: str | None = None

    def __post_init__(self):
        self.levels = tuple(int(v) for v in np.atleast_1d(self.levels))
        self.validate()

    def validate(self):
        if self.surface not in ("sphere", "torus"):
            raise ConfigError(f"unknown surface {self.surface!r}")
        if not self.levels:
            raise ConfigError("levels must be nonempty")
        if min(self.levels) < 0:
            raise ConfigError("levels must be non-negative")
        try:
            build_scheme(self.s, self.kappa, 3, self.k)
        except (InvalidFraction, ValueError) as err:
            raise ConfigError(str(err)) from err
        if self.mc_samples < 2:
            raise ConfigError("mc_samples must be at least 2")
        if self.truncation < 0:
            raise ConfigError("truncation must be non-negative")
        if self.rhs_order != "auto" and not (isinstance(self.rhs_order, int) and self.rhs_order >= 1):
            raise ConfigError(f"rhs_order must be a positive integer or 'auto', got {self.rhs_order!r}")
        if self.error_norm not in ERROR_NORMS:
            raise ConfigError(f"error_norm must be one of {ERROR_NORMS}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.control_modes < 0:
            raise ConfigError("control_modes must be non-negative")
        try:
            resolve_method(self.method, 1)
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def make_surface(self):
        if self.surface == "sphere":
            return Sphere(self.radius)
        try:
            return Torus(self.major_radius, self.minor_radius)
        except ValueError as err:
            raise ConfigError(str(err)) from err

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, fields[key].default)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        values = {}
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if key == "levels":
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        if key == "rhs_order":
            return raw if raw == "auto" else int(raw)
        if key in ("n_jobs",):
            return None if raw.lower() in ("", "none") else int(raw)
        if key in ("out_csv", "out_vtk"):
            return raw or None
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {raw!r}") from err
    return raw


class LevelData:
    """Mesh and finite element matrices of one refinement level, built on demand."""

    def __init__(self, surface, level: int):
        self.surface = surface
        self.level = level
        self.mesh = make_mesh(surface, level)
        self.mass = fem.assemble_mass(self.mesh)
        self.stiffness = fem.assemble_stiffness(self.mesh)
        self._weighted_mass = None
        self._factor = None
        self._eigen = None
        self._geometry = None
        self._loads = {}

    @property
    def weighted_mass(self):
        if self._weighted_mass is None:
            self._weighted_mass = fem.assemble_weighted_mass(self.mesh)
        return self._weighted_mass

    @property
    def factor(self) -> fem.CholeskyFactor:
        if self._factor is None:
            self._factor = fem.cholesky(self.weighted_mass)
        return self._factor

    @property
    def eigen(self) -> PencilEigen:
        if self._eigen is None:
            self._eigen = PencilEigen.compute(self.mass, self.stiffness)
        return self._eigen

    def harmonic_loads(self, L: int, order: int) -> np.ndarray:
        """Coupled load matrix ``B`` with ``B[i, j] = int_Gamma sigma (Y_j o P) phi_i``."""
        key = (L, order)
        if key not in self._loads:
            self._loads[key] = HarmonicProjection(self.mesh, L, order, keep=False).load_matrix()
        return self._loads[key]

    def operator(self, scheme, method="auto"):
        method = resolve_method(method, self.mesh.n_vertices)
        eigen = self.eigen if method == "spectral" else None
        return make_operator(scheme, self.mass, self.stiffness, method, eigen)

    def geometry(self) -> dict:
        if self._geometry is None:
            self._geometry = {
                "N": self.mesh.n_vertices,
                "h": self.mesh.h(),
                "e_sigma": self.mesh.e_sigma(),
            }
        return dict(self._geometry)


class LevelCache(dict):
    """``(surface, level) -> LevelData``; share between experiments to reuse factorisations."""

    def get_level(self, surface, level) -> LevelData:
        key = (surface, level)
        if key not in self:
            self[key] = LevelData(surface, level)
        return self[key]


def _batches(n, size):
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def _run_batches(work, batches, n_jobs):
    """Evaluate ``work`` on every batch; results are returned in batch order."""
    workers = n_threads(n_jobs)
    if workers == 1 or len(batches) == 1:
        return [work(b) for b in batches]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(work, batches))


def _warn_stderr(name, estimate, stderr):
    if estimate > 0 and stderr > STDERR_WARN_FRACTION * estimate:
        warnings.warn(
            f"{name}: Monte Carlo standard error {stderr:.3g} exceeds "
            f"{STDERR_WARN_FRACTION:.0%} of the estimate {estimate:.3g}",
            RuntimeWarning,
            stacklevel=3,
        )


def _require_sphere(config, what):
    if config.surface != "sphere":
        raise ConfigError(f"{what} needs the spherical-harmonic reference; surface must be sphere")


class HarmonicProjection:
    """Data vectors and reference norms for truncated harmonic expansions on a mesh.

    For coefficient columns ``Xi`` of the white noise and degree weights
    ``D``, :meth:`moments` returns

    * ``alpha`` with ``alpha_i = int_Gamma sigma (w_L o P) phi_i`` (coupled data vector),
    * ``beta`` with ``beta_i = int_Gamma (u_L o P) phi_i``,
    * ``g = int_Gamma (u_L o P)^2``,

    all by tensor Gauss quadrature of the given order. Together with the
    mass matrix for the same quadrature (:attr:`mass`) this yields the exact
    quadrature value of ``|| U - u_L o P ||^2_{L2(Gamma)}``.
    """

    def __init__(self, mesh, L: int, order: int, keep: bool = True):
        self.mesh = mesh
        self.L = L
        x, dA, sigma, ids, phi = fem.quadrature_points(mesh, order)
        self.points = mesh.surface.closest_point(x).reshape(-1, 3)
        self.dA = dA.ravel()
        nq = phi.shape[0]
        rows = ids[:, None, :].repeat(nq, axis=1).reshape(-1, 4)
        cols = np.repeat(np.arange(len(self.points)), 4)
        shape = (mesh.n_vertices, len(self.points))
        base = np.tile(phi, (mesh.n_faces, 1)).ravel()
        self._weighted = sp.csc_matrix(
            ((base * np.repeat((dA * sigma).ravel(), 4)), (rows.ravel(), cols)), shape=shape
        )
        self._plain = sp.csc_matrix(
            ((base * np.repeat(self.dA, 4)), (rows.ravel(), cols)), shape=shape
        )
        self.mass = fem.assemble_mass(mesh, order)
        n_floats = len(self.points) * spectral.n_coefficients(L)
        # small meshes keep the harmonic values; large ones recompute them per batch
        keep = keep and n_floats <= _HARMONIC_CACHE_FLOATS
        self._cache = list(self._evaluate()) if keep else None

    def _evaluate(self):
        for a in range(0, len(self.points), _POINT_CHUNK):
            sl = slice(a, min(a + _POINT_CHUNK, len(self.points)))
            yield sl, spectral.real_harmonics(self.L, self.points[sl])

    def _chunks(self):
        return self._cache if self._cache is not None else self._evaluate()

    def load_matrix(self) -> np.ndarray:
        """``B`` of shape ``(N, (L+1)^2)``; the coupled data vector is ``B xi``."""
        B = np.zeros((self.mesh.n_vertices, spectral.n_coefficients(self.L)))
        for sl, Y in self._chunks():
            B += self._weighted[:, sl] @ Y
        return B

    def moments(self, xi, weights):
        xi = np.asarray(xi, dtype=float)
        scaled = weights[:, None] * xi
        n, b = self.mesh.n_vertices, xi.shape[1]
        alpha, beta, g = np.zeros((n, b)), np.zeros((n, b)), np.zeros(b)
        for sl, Y in self._chunks():
            w = Y @ xi
            u = Y @ scaled
            alpha += self._weighted[:, sl] @ w
            beta += self._plain[:, sl] @ u
            g += self.dA[sl] @ (u * u)
        return alpha, beta, g


def resolving_order(mesh, L: int) -> int:
    """Gauss order per direction that integrates degree-``L`` harmonics on ``mesh`` accurately."""
    return max(3, math.ceil(0.4 * L * mesh.h()) + 2)


def _strong_squares(config, data: LevelData, draw=None):
    mesh = data.mesh
    scheme = build_scheme(config.s, config.kappa, 3, config.k)
    op = data.operator(scheme, config.method)
    L = config.truncation
    D = spectral.degree_weights(config.kappa, config.s, L)
    J = spectral.n_coefficients(L)
    order = resolving_order(mesh, L) if config.rhs_order == "auto" else config.rhs_order
    if draw is None:
        def draw(indices):
            return standard_normal_block(config.seed, indices, J, tag="kl")

    if config.error_norm == "polyhedral":
        proj = HarmonicProjection(mesh, L, order)

        def work(batch):
            xi = draw(list(batch))
            alpha, beta, g = proj.moments(xi, D)
            U = op.apply(alpha)
            return (np.einsum("ib,ib->b", U, proj.mass @ U)
                    - 2 * np.einsum("ib,ib->b", U, beta) + g)
    else:
        # || U o P^{-1} - u_L ||^2 on the exact surface: every term is a load-matrix product
        B = data.harmonic_loads(L, order)
        Ms = data.weighted_mass

        def work(batch):
            xi = draw(list(batch))
            U = op.apply(B @ xi)
            return (np.einsum("ib,ib->b", U, Ms @ U)
                    - 2 * np.einsum("ib,ib->b", U, B @ (D[:, None] * xi))
                    + np.einsum("j,jb->b", D * D, xi * xi))

    parts = _run_batches(work, _batches(config.mc_samples, config.batch_size), config.n_jobs)
    # rounding can push an exact zero slightly negative
    return np.maximum(np.concatenate(parts), 0.0), order


def run_strong_error(config: ExperimentConfig, cache: LevelCache | None = None, draw=None) -> Table:
    """Coupled strong error against the truncated spherical-harmonic field.

    ``draw(indices)`` may replace the coefficient source; it must return an
    array of shape ``((L + 1)^2, len(indices))``.
    """
    _require_sphere(config, "strong error")
    cache = LevelCache() if cache is None else cache
    surface = config.make_surface()
    table = Table(GEOMETRY_COLUMNS + ["e_strong", "stderr", "M", "rhs_order"])
    for level in config.levels:
        data = cache.get_level(surface, level)
        sq, order = _strong_squares(config, data, draw)
        e = math.sqrt(float(np.mean(sq)))
        stderr = float(np.std(sq, ddof=1) / math.sqrt(len(sq)))
        stderr = stderr / (2 * e) if e > 0 else 0.0
        _warn_stderr(f"strong error at level {level}", e, stderr)
        table.add(**data.geometry(), e_strong=e, stderr=stderr, M=len(sq), rhs_order=order)
    table.meta.update(kind="strong", s=config.s, kappa=config.kappa, error_norm=config.error_norm)
    return table


class _ControlVariate:
    """Low-mode part of ``||U||^2`` with its exact mean, for variance reduction."""

    def __init__(self, op: SpectralOperator, weighted_mass, modes: int):
        V = op.eigenvectors[:, :modes]
        self.V = V
        self.q2 = op.filter[:modes] ** 2
        self.mean = float(np.sum(self.q2 * np.einsum("ik,ik->k", V, weighted_mass @ V)))

    def __call__(self, alpha):
        c = self.V.T @ alpha
        return self.q2 @ (c * c)


def _weak_norms(config, data: LevelData, indices=None):
    scheme = build_scheme(config.s, config.kappa, 3, config.k)
    op = data.operator(scheme, config.method)
    noise = NoiseSampler(data.factor, config.seed, tag="noise")
    control = None
    if config.control_modes:
        if not isinstance(op, SpectralOperator):
            raise ConfigError("control_modes needs the spectral method")
        control = _ControlVariate(op, data.weighted_mass, min(config.control_modes, data.mesh.n_vertices))
    idx = np.arange(config.mc_samples) if indices is None else np.asarray(indices)

    def work(batch):
        alpha = noise.sample_block(idx[batch.start:batch.stop])
        U = op.apply(alpha)
        val = np.einsum("ib,ib->b", U, data.mass @ U)
        if control is not None:
            val = val - control(alpha) + control.mean
        return val

    parts = _run_batches(work, _batches(len(idx), config.batch_size), config.n_jobs)
    return np.concatenate(parts)


def run_weak_error(config: ExperimentConfig, cache: LevelCache | None = None, indices=None) -> Table:
    """Monte Carlo mean of ``||U||^2`` against the exact series value.

    ``indices`` overrides the sample indices ``0 .. M-1``. With
    ``control_modes > 0`` the lowest eigenmodes serve as a control variate,
    which leaves the estimator unbiased and shrinks its variance.
    """
    _require_sphere(config, "weak error")
    cache = LevelCache() if cache is None else cache
    surface = config.make_surface()
    exact = spectral.exact_norm_sq(config.kappa, config.s)
    table = Table(GEOMETRY_COLUMNS + ["e_weak", "norm_sq", "stderr", "exact", "M"])
    for level in config.levels:
        data = cache.get_level(surface, level)
        norms = _weak_norms(config, data, indices)
        mean = float(np.mean(norms))
        stderr = float(np.std(norms, ddof=1) / math.sqrt(len(norms))) if len(norms) > 1 else 0.0
        e = abs(exact - mean)
        _warn_stderr(f"weak error at level {level}", e, stderr)
        table.add(**data.geometry(), e_weak=e, norm_sq=mean, stderr=stderr, exact=exact, M=len(norms))
    table.meta.update(kind="weak", s=config.s, kappa=config.kappa)
    return table


def _point_values(config, data: LevelData, op, ids, w, tag):
    noise = NoiseSampler(data.factor, config.seed, tag=tag)

    def work(batch):
        U = op.apply(noise.sample_block(batch))
        return np.einsum("pa,pab->pb", w, U[ids])

    parts = _run_batches(work, _batches(config.mc_samples, config.batch_size), config.n_jobs)
    return np.concatenate(parts, axis=1)


def run_covariance(config: ExperimentConfig, points, cache: LevelCache | None = None) -> Table:
    """Pairwise covariance of the field at surface ``points`` on the last configured level.

    The mean field comes from the ``mean`` sample set and the covariance
    from an independent ``cov`` set of the same size.
    """
    cache = LevelCache() if cache is None else cache
    surface = config.make_surface()
    points = np.atleast_2d(np.asarray(points, dtype=float))
    data = cache.get_level(surface, config.levels[-1])
    ids, w = PointLocator(data.mesh).weights(points)
    scheme = build_scheme(config.s, config.kappa, 3, config.k)
    op = data.operator(scheme, config.method)
    mean = _point_values(config, data, op, ids, w, "mean").mean(axis=1)
    dev = _point_values(config, data, op, ids, w, "cov") - mean[:, None]
    M = dev.shape[1]
    table = Table(["i", "j", "x_i", "x_j", "cov", "stderr", "N", "M"])
    for i in range(len(points)):
        for j in range(i, len(points)):
            prod = dev[i] * dev[j]
            table.add(
                i=i + 1,
                j=j + 1,
                x_i=" ".join(f"{c:g}" for c in points[i]),
                x_j=" ".join(f"{c:g}" for c in points[j]),
                cov=float(prod.sum() / (M - 1)),
                stderr=float(np.std(prod, ddof=1) / math.sqrt(M)),
                N=data.mesh.n_vertices,
                M=M,
            )
    table.meta.update(kind="covariance", s=config.s, kappa=config.kappa)
    return table


def covariance_matrix(table: Table) -> np.ndarray:
    """Symmetric matrix from the pairwise rows of :func:`run_covariance`."""
    n = int(max(table.column("j")))
    C = np.zeros((n, n))
    for r in table.rows:
        i, j = int(r["i"]) - 1, int(r["j"]) - 1
        C[i, j] = C[j, i] = r["cov"]
    return C


FLAT_SLOPE = 0.1


def loglog_slope(h, err) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    h, err = np.asarray(h, dtype=float), np.asarray(err, dtype=float)
    if len(h) < 2 or np.any(h <= 0) or np.any(err <= 0):
        raise ValueError("need at least two positive (h, error) pairs")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def strong_rate(s: float, n: int = 3) -> float:
    return 2 * s - (n - 1) / 2


def weak_rate(s: float, n: int = 3) -> float:
    return min(4 * s - (n - 1), 2.0)


def summarise_slope(name, h, err, target) -> dict:
    slope = loglog_slope(h, err)
    ratios = np.asarray(err[:-1]) / np.asarray(err[1:])
    return {
        "quantity": name,
        "slope": slope,
        "target": target,
        "ratios": ";".join(f"{r:.4g}" for r in ratios),
        "status": "FAIL" if slope < FLAT_SLOPE else "ok",
    }


def run_convergence_summary(config: ExperimentConfig, cache: LevelCache | None = None,
                            quantities=("strong", "weak")):
    """Strong and weak error tables plus their log-log slopes.

    Returns ``(summary, tables)`` where ``tables`` maps each quantity to its
    per-level table. A slope below ``FLAT_SLOPE`` is flagged ``FAIL``.
    """
    if len(config.levels) < 3:
        raise ConfigError("convergence summary needs at least three levels")
    cache = LevelCache() if cache is None else cache
    summary = Table(["quantity", "slope", "target", "ratios", "status"])
    tables = {}
    if "strong" in quantities:
        t = run_strong_error(config, cache)
        summary.add(**summarise_slope("strong", t.column("h"), t.column("e_strong"),
                                      strong_rate(config.s)))
        tables["strong"] = t
    if "weak" in quantities:
        t = run_weak_error(config, cache)
        summary.add(**summarise_slope("weak", t.column("h"), t.column("e_weak"),
                                      weak_rate(config.s)))
        tables["weak"] = t
    summary.meta.update(kind="convergence", s=config.s, kappa=config.kappa)
    return summary, tables


def mesh_table(surface, levels) -> Table:
    table = Table(["level", "N", "faces", "edges", "euler", "h", "e_sigma"])
    for level in levels:
        mesh = make_mesh(surface, level)
        table.add(level=level, N=mesh.n_vertices, faces=mesh.n_faces, edges=mesh.n_edges,
                  euler=mesh.euler_characteristic, h=mesh.h(), e_sigma=mesh.e_sigma())
    return table


def eigen_table(surface, level, kappa, m) -> Table:
    """Smallest pencil eigenvalues; on the sphere also the exact values ``kappa^2 + l(l+1)``."""
    mesh = make_mesh(surface, level)
    lam = fem.smallest_eigenpairs(fem.assemble_stiffness(mesh), fem.assemble_mass(mesh), kappa, m)
    cols = ["j", "eigenvalue"]
    exact = None
    if isinstance(surface, Sphere):
        deg = spectral.degrees(int(math.isqrt(m)) + 1)[:m]
        exact = kappa**2 + deg * (deg + 1.0) / surface.radius**2
        cols += ["exact", "rel_error"]
    table = Table(cols)
    for j, v in enumerate(lam):
        row = {"j": j + 1, "eigenvalue": float(v)}
        if exact is not None:
            row.update(exact=float(exact[j]), rel_error=float((v - exact[j]) / exact[j]))
        table.add(**row)
    return table


def scalar_sinc_table(s, kappa, k=DEFAULT_SPACING, lam_min=0.25, lam_max=1e6, count=200) -> Table:
    scheme = build_scheme(s, kappa, 3, k)
    lam = np.logspace(math.log10(lam_min), math.log10(lam_max), count)
    approx = scheme.scalar(lam)
    exact = lam ** (-s)
    table = Table(["lambda", "sinc", "exact", "rel_error"])
    for a, b, c in zip(lam, approx, exact):
        table.add(**{"lambda": float(a), "sinc": float(b), "exact": float(c),
                     "rel_error": float(abs(b - c) / c)})
    table.meta.update(nodes=scheme.n_nodes, n_plus=scheme.n_plus, n_minus=scheme.n_minus,
                      bound=scheme.error_scale)
    return table
