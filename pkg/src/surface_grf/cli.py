"""Command line interface: ``surface-grf <subcommand> ...``.

Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
numerical failures. Tables go to ``--out`` when given, otherwise to stdout.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .exceptions import (
    ConfigError,
    DegeneratePoint,
    InvalidFraction,
    NoConvergence,
    NotPositiveDefinite,
    PointLocationFailure,
    ProjectionFailure,
)
from .geometry import Sphere, Torus
from .io import Table, export_csv, export_field_vtk
from .sampler import THREADS_ENV, WhittleMaternSampler
from .mesh import make_mesh
from .spectral import exact_norm_sq

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

DEFAULT_POINTS = {
    "sphere": "0,0,-1;0,1,0;0,0,1",
    "torus": "1.5,0,0;2,0.5,0;2.5,0,0",
}

# flag name -> ExperimentConfig field
_CONFIG_FLAGS = {
    "surface": "surface",
    "levels": "levels",
    "s": "s",
    "kappa": "kappa",
    "k": "k",
    "samples": "mc_samples",
    "truncation": "truncation",
    "seed": "seed",
    "rhs_order": "rhs_order",
    "error_norm": "error_norm",
    "method": "method",
    "batch_size": "batch_size",
    "threads": "n_jobs",
    "control_modes": "control_modes",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _experiment_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--surface", choices=["sphere", "torus"])
    p.add_argument("--levels", help="comma-separated refinement levels, e.g. 2,3,4")
    p.add_argument("--s", type=float, help="fractional power")
    p.add_argument("--kappa", type=float)
    p.add_argument("--k", type=float, help="sinc quadrature spacing")
    p.add_argument("--samples", type=int, help="Monte Carlo sample size M")
    p.add_argument("--truncation", type=int, help="harmonic truncation degree L")
    p.add_argument("--seed", type=int)
    p.add_argument("--rhs-order", help="data-vector Gauss order, or 'auto'")
    p.add_argument("--error-norm", choices=list(ex.ERROR_NORMS))
    p.add_argument("--method", choices=["auto", "spectral", "factorized"])
    p.add_argument("--batch-size", type=int)
    p.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or 1)")
    p.add_argument("--control-modes", type=int, help="eigenmodes used as a control variate")
    p.add_argument("--out", help="CSV output path")
    return p


def _surface_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--surface", choices=["sphere", "torus"], default="sphere")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="surface-grf", description="Whittle-Matern random fields on surfaces")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    exp, surf = _experiment_flags(), _surface_flags()

    mesh = sub.add_parser("mesh", help="mesh utilities")
    msub = mesh.add_subparsers(dest="mesh_command", required=True, parser_class=_Parser)
    info = msub.add_parser("info", parents=[surf], help="mesh size and area-ratio table")
    info.add_argument("--levels", default="0,1,2,3")
    info.add_argument("--out")

    sample = sub.add_parser("sample", parents=[surf], help="draw realisations, write VTK")
    sample.add_argument("--level", type=int, default=3)
    sample.add_argument("--s", type=float, default=0.75)
    sample.add_argument("--kappa", type=float, default=0.5)
    sample.add_argument("--k", type=float, default=0.6)
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument("--index", type=int, default=0, help="first sample index")
    sample.add_argument("--count", type=int, default=1)
    sample.add_argument("--method", choices=["auto", "spectral", "factorized"], default="auto")
    sample.add_argument("--threads", type=int)
    sample.add_argument("--vtk", help="VTK path; '{i}' is replaced by the sample index")
    sample.add_argument("--out", help="CSV of per-sample summaries")

    for name, help_ in [
        ("strong-error", "coupled strong error table (sphere)"),
        ("weak-error", "mean-square norm and weak error table (sphere)"),
        ("convergence", "strong and weak errors with log-log slopes"),
    ]:
        sub.add_parser(name, parents=[exp], help=help_)
    cov = sub.add_parser("covariance", parents=[exp], help="pairwise covariance at points")
    cov.add_argument("--points", help="'x,y,z;x,y,z;...' (default: the reference points)")

    eigs = sub.add_parser("eigs", parents=[surf], help="smallest pencil eigenvalues")
    eigs.add_argument("--level", type=int, default=3)
    eigs.add_argument("--kappa", type=float, default=0.5)
    eigs.add_argument("--m", type=int, default=9)
    eigs.add_argument("--out")

    sinc = sub.add_parser("scalar-sinc", help="accuracy of the scalar sinc rule")
    sinc.add_argument("--s", type=float, default=0.75)
    sinc.add_argument("--kappa", type=float, default=1.0)
    sinc.add_argument("--k", type=float, default=0.6)
    sinc.add_argument("--count", type=int, default=200)
    sinc.add_argument("--lam-min", type=float, default=0.25)
    sinc.add_argument("--lam-max", type=float, default=1e6)
    sinc.add_argument("--out")

    norm = sub.add_parser("exact-norm", help="exact mean-square norm series on the sphere")
    norm.add_argument("--kappa", type=float, default=0.5)
    norm.add_argument("--s", type=float, default=0.75)
    norm.add_argument("--L", type=int, default=100_000, help="last degree in the sum")
    return parser


def _config(args) -> ex.ExperimentConfig:
    flags = {field: getattr(args, flag) for flag, field in _CONFIG_FLAGS.items()
             if getattr(args, flag, None) is not None}
    if args.config:
        return ex.ExperimentConfig.from_file(args.config, **flags)
    return ex.ExperimentConfig.from_mapping(flags)


def _parse_points(text) -> np.ndarray:
    try:
        pts = np.array([[float(c) for c in p.split(",")] for p in text.split(";") if p.strip()])
    except ValueError as err:
        raise ConfigError(f"cannot parse points {text!r}") from err
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ConfigError("points must be 'x,y,z' triples separated by ';'")
    return pts


def _surface(name):
    return Sphere() if name == "sphere" else Torus()


def _levels(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise ConfigError(f"bad levels {text!r}") from err


def _emit(table: Table, out):
    if out:
        export_csv(table, out)
    else:
        sys.stdout.write(table.to_csv())


def _cmd_mesh(args):
    _emit(ex.mesh_table(_surface(args.surface), _levels(args.levels)), args.out)


def _vtk_path(template, i, count):
    if "{i}" in template:
        return template.replace("{i}", str(i))
    if count == 1:
        return template
    p = Path(template)
    return p.with_name(f"{p.stem}_{i}{p.suffix}")


def _cmd_sample(args):
    if args.count < 1 or args.index < 0:
        raise ConfigError("need count >= 1 and index >= 0")
    mesh = make_mesh(_surface(args.surface), args.level)
    try:
        est = WhittleMaternSampler(args.s, args.kappa, args.k, args.method, args.seed,
                                   n_jobs=args.threads).fit(mesh)
    except (InvalidFraction, ValueError) as err:
        raise ConfigError(str(err)) from err
    fields = est.sample(args.count, start=args.index)
    table = Table(["index", "N", "min", "max", "mean"])
    for j, u in enumerate(fields):
        i = args.index + j
        if args.vtk:
            export_field_vtk(mesh, u, _vtk_path(args.vtk, i, args.count))
        table.add(index=i, N=mesh.n_vertices, min=float(u.min()), max=float(u.max()),
                  mean=float(u.mean()))
    _emit(table, args.out)


def _cmd_strong(args):
    _emit(ex.run_strong_error(_config(args)), args.out)


def _cmd_weak(args):
    _emit(ex.run_weak_error(_config(args)), args.out)


def _cmd_covariance(args):
    cfg = _config(args)
    pts = _parse_points(args.points or DEFAULT_POINTS[cfg.surface])
    _emit(ex.run_covariance(cfg, pts), args.out)


def _cmd_convergence(args):
    cfg = _config(args)
    summary, tables = ex.run_convergence_summary(cfg)
    for name, t in tables.items():
        sys.stderr.write(f"# {name}\n{t.to_csv()}")
    _emit(summary, args.out)


def _cmd_eigs(args):
    if not 1 <= args.m <= 20:
        raise ConfigError("--m must be between 1 and 20")
    _emit(ex.eigen_table(_surface(args.surface), args.level, args.kappa, args.m), args.out)


def _cmd_sinc(args):
    try:
        t = ex.scalar_sinc_table(args.s, args.kappa, args.k, args.lam_min, args.lam_max, args.count)
    except (InvalidFraction, ValueError) as err:
        raise ConfigError(str(err)) from err
    _emit(t, args.out)
    worst = max(t.column("rel_error"))
    sys.stderr.write(f"nodes={t.meta['nodes']} max_rel_error={worst:.3e} "
                     f"exp(-pi^2/k)={t.meta['bound']:.3e}\n")


def _cmd_norm(args):
    if args.L < 0 or args.kappa <= 0:
        raise ConfigError("need L >= 0 and kappa > 0")
    print(f"{exact_norm_sq(args.kappa, args.s, args.L):.5f}")


_COMMANDS = {
    "mesh": _cmd_mesh,
    "sample": _cmd_sample,
    "strong-error": _cmd_strong,
    "weak-error": _cmd_weak,
    "covariance": _cmd_covariance,
    "convergence": _cmd_convergence,
    "eigs": _cmd_eigs,
    "scalar-sinc": _cmd_sinc,
    "exact-norm": _cmd_norm,
}

_NUMERICAL = (NotPositiveDefinite, NoConvergence, ProjectionFailure, PointLocationFailure,
              DegeneratePoint, np.linalg.LinAlgError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except ConfigError as err:
        sys.stderr.write(f"config error: {err}\n")
        return EXIT_CONFIG
    except _NUMERICAL as err:
        sys.stderr.write(f"numerical failure: {err}\n")
        return EXIT_NUMERICAL
    except OSError as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
