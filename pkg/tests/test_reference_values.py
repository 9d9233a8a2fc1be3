"""Published per-level values from the sphere and torus experiments (slow)."""
import numpy as np
import pytest

from surface_grf import experiments as ex

pytestmark = pytest.mark.slow


def test_strong_error_fine_sphere_levels(level_cache):
    cfg = ex.ExperimentConfig(levels=(4,), s=0.75, kappa=0.5, mc_samples=2000, seed=31)
    row = ex.run_strong_error(cfg, level_cache).rows[0]
    assert row["N"] == 1538
    assert row["e_strong"] == pytest.approx(0.244, rel=0.05)
    cfg = ex.ExperimentConfig(levels=(5,), s=0.9, kappa=2.0, mc_samples=1000, seed=32)
    row = ex.run_strong_error(cfg, level_cache).rows[0]
    assert row["N"] == 6146
    assert row["e_strong"] == pytest.approx(0.028, rel=0.05)


@pytest.mark.parametrize("kappa,s,ref", [(0.5, 0.75, 9.843), (8.0, 0.9, 0.0416)])
def test_mean_square_norm_finest_sphere(level_cache, kappa, s, ref):
    cfg = ex.ExperimentConfig(levels=(5,), s=s, kappa=kappa, mc_samples=2000, seed=33)
    row = ex.run_weak_error(cfg, level_cache).rows[0]
    assert abs(row["norm_sq"] - ref) <= max(3 * row["stderr"], 0.02 * ref)


def test_torus_covariance(level_cache):
    pts = np.array([[1.5, 0, 0], [2, 0.5, 0], [2.5, 0, 0]])
    cfg = ex.ExperimentConfig(surface="torus", levels=(2,), s=0.9, kappa=2.0,
                              mc_samples=10_000, seed=34)
    t = ex.run_covariance(cfg, pts, level_cache)
    row = next(r for r in t.rows if (r["i"], r["j"]) == (1, 3))
    assert row["N"] == 1280
    assert abs(row["cov"] - 0.005097) <= 3 * row["stderr"]
    C = ex.covariance_matrix(t)
    assert np.linalg.eigvalsh(C).min() >= 0
