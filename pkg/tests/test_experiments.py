import numpy as np
import pytest

from surface_grf import experiments as ex
from surface_grf import fem, spectral
from surface_grf.exceptions import ConfigError
from surface_grf.geometry import Sphere
from surface_grf.sampler import build_scheme, make_operator


@pytest.fixture(scope="module")
def cache():
    return ex.LevelCache()


def small(**kw):
    base = dict(levels=(1, 2), mc_samples=40, truncation=8, batch_size=16, seed=5)
    base.update(kw)
    return ex.ExperimentConfig(**base)


# -- config ------------------------------------------------------------------

def test_config_defaults():
    c = ex.ExperimentConfig()
    assert (c.k, c.mc_samples, c.truncation) == (0.6, 10_000, 100)


@pytest.mark.parametrize("bad", [
    dict(s=0.5), dict(s=1.0), dict(mc_samples=1), dict(levels=()), dict(surface="cube"),
    dict(rhs_order=0), dict(error_norm="h1"), dict(method="qr"), dict(batch_size=0),
    dict(truncation=-1), dict(control_modes=-2), dict(levels=(-1,)),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ex.ExperimentConfig(**bad)


def test_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# sphere run\nsurface = sphere\nlevels = 2, 3\ns = 0.9  # smoother\n"
                    "kappa = 2\nmc_samples = 100\nrhs_order = auto\n")
    c = ex.ExperimentConfig.from_file(path, seed=7)
    assert c.levels == (2, 3) and c.s == 0.9 and c.kappa == 2.0
    assert c.rhs_order == "auto" and c.mc_samples == 100 and c.seed == 7
    path.write_text("bogus = 1\n")
    with pytest.raises(ConfigError):
        ex.ExperimentConfig.from_file(path)
    path.write_text("levels 2\n")
    with pytest.raises(ConfigError):
        ex.ExperimentConfig.from_file(path)
    with pytest.raises(ConfigError):
        ex.ExperimentConfig.from_file(tmp_path / "nope.cfg")
    with pytest.raises(ConfigError):
        ex.ExperimentConfig.from_mapping({"kappa": "fast"})


def test_torus_config_rejected_for_reference_errors():
    with pytest.raises(ConfigError):
        ex.run_strong_error(small(surface="torus"))
    with pytest.raises(ConfigError):
        ex.run_weak_error(small(surface="torus"))


# -- harmonic projection -----------------------------------------------------

def test_load_matrix_matches_project_function(sphere_meshes):
    mesh = sphere_meshes[2]
    L, order = 6, 5
    B = ex.HarmonicProjection(mesh, L, order).load_matrix()
    ref = fem.project_function(mesh, lambda x: spectral.real_harmonics(L, x), order)
    np.testing.assert_allclose(B, ref, atol=1e-13)
    # uncached path gives the same matrix
    B2 = ex.HarmonicProjection(mesh, L, order, keep=False).load_matrix()
    np.testing.assert_allclose(B2, B, atol=1e-14)


def test_resolving_order():
    assert ex.resolving_order(ex.make_mesh(Sphere(), 2), 100) == 24
    assert ex.resolving_order(ex.make_mesh(Sphere(), 5), 100) == 5
    assert ex.resolving_order(ex.make_mesh(Sphere(), 5), 0) == 3


@pytest.mark.parametrize("norm,order,tol", [("polyhedral", 5, 1e-12), ("lifted", 10, 1e-5)])
def test_strong_squares_match_direct_quadrature(norm, order, tol, cache):
    # polyhedral: same quadrature, so agreement to rounding. lifted: the weighted mass
    # uses its own quadrature and the reference norm is summed exactly, so the two
    # differ by quadrature error, small against ||u_L||^2 ~ 10
    cfg = small(levels=(2,), mc_samples=3, truncation=6, rhs_order=order, error_norm=norm)
    data = cache.get_level(Sphere(), 2)
    sq, used = ex._strong_squares(cfg, data)
    assert used == order
    scheme = build_scheme(cfg.s, cfg.kappa, 3, cfg.k)
    op = make_operator(scheme, data.mass, data.stiffness, "factorized")
    x, dA, sigma, ids, phi = fem.quadrature_points(data.mesh, order)
    weight = dA if norm == "polyhedral" else dA * sigma
    D = spectral.degree_weights(cfg.kappa, cfg.s, 6)
    for i in range(3):
        c = spectral.sample_coefficients(6, cfg.seed, i, tag="kl")
        alpha = fem.project_function(data.mesh, c.noise, order)
        U = op.apply(alpha)
        uh = np.einsum("qa,ma->mq", phi, U[ids])
        u = spectral.real_harmonics(6, data.mesh.surface.closest_point(x)) @ (D * c.xi)
        assert sq[i] == pytest.approx(np.sum(weight * (uh - u) ** 2), abs=tol)


def test_zero_noise_gives_zero_strong_error(cache):
    cfg = small(levels=(1, 2))
    J = spectral.n_coefficients(cfg.truncation)
    t = ex.run_strong_error(cfg, cache, draw=lambda idx: np.zeros((J, len(idx))))
    assert t.column("e_strong") == [0.0, 0.0]
    assert t.column("N") == [26, 98]


def test_strong_error_table_shape(cache):
    t = ex.run_strong_error(small(rhs_order="auto", error_norm="lifted"), cache)
    assert t.columns == ["N", "h", "e_sigma", "e_strong", "stderr", "M", "rhs_order"]
    assert all(v > 0 for v in t.column("e_strong"))
    assert all(v > 0 for v in t.column("stderr"))


def test_weak_error_with_duplicated_index(cache):
    cfg = small(levels=(2,), mc_samples=6)
    t = ex.run_weak_error(cfg, cache, indices=[3] * 6)
    single = ex.run_weak_error(cfg.replace(mc_samples=2), cache, indices=[3, 3])
    assert t.rows[0]["norm_sq"] == pytest.approx(single.rows[0]["norm_sq"], rel=1e-14)
    assert t.rows[0]["stderr"] == pytest.approx(0.0, abs=1e-12)
    data = cache.get_level(Sphere(), 2)
    from surface_grf.sampler import NoiseSampler
    alpha = NoiseSampler(data.factor, cfg.seed).sample_alpha(3)
    U = data.operator(build_scheme(cfg.s, cfg.kappa)).apply(alpha)
    assert t.rows[0]["norm_sq"] == pytest.approx(U @ (data.mass @ U), rel=1e-10)
    assert t.rows[0]["exact"] == pytest.approx(9.86958, abs=5e-6)


def test_control_variate_is_unbiased(cache):
    cfg = small(levels=(2,), mc_samples=3000, batch_size=1000, kappa=2.0, s=0.9)
    plain = ex.run_weak_error(cfg, cache).rows[0]
    cv = ex.run_weak_error(cfg.replace(control_modes=16), cache).rows[0]
    assert cv["stderr"] < plain["stderr"] / 5
    assert abs(cv["norm_sq"] - plain["norm_sq"]) <= 4 * np.hypot(cv["stderr"], plain["stderr"])
    with pytest.raises(ConfigError):
        ex.run_weak_error(cfg.replace(control_modes=4, method="factorized", mc_samples=4), cache)


def test_results_do_not_depend_on_threads(cache):
    a = ex.run_weak_error(small(n_jobs=1), cache).to_csv()
    b = ex.run_weak_error(small(n_jobs=4), cache).to_csv()
    assert a == b
    a = ex.run_strong_error(small(n_jobs=1), cache).to_csv()
    b = ex.run_strong_error(small(n_jobs=3), cache).to_csv()
    assert a == b


def test_stderr_warning(cache):
    with pytest.warns(RuntimeWarning, match="standard error"):
        ex.run_weak_error(small(levels=(3,), mc_samples=4, kappa=0.5), cache)


def test_covariance_table(cache):
    pts = np.array([[0, 0, -1.0], [0, 1.0, 0], [0, 0, 1.0]])
    cfg = small(levels=(2,), mc_samples=400, batch_size=200)
    t = ex.run_covariance(cfg, pts, cache)
    assert len(t) == 6
    C = ex.covariance_matrix(t)
    np.testing.assert_array_equal(C, C.T)
    assert np.all(np.diag(C) >= 0)
    assert np.linalg.eigvalsh(C).min() >= -1e-12
    # the covariance column equals the sample covariance of the "cov" sample set
    data = cache.get_level(Sphere(), 2)
    from surface_grf.locate import PointLocator
    from surface_grf.sampler import NoiseSampler
    ids, w = PointLocator(data.mesh).weights(pts)
    op = data.operator(build_scheme(cfg.s, cfg.kappa))
    vals = {}
    for tag in ("mean", "cov"):
        U = op.apply(NoiseSampler(data.factor, cfg.seed, tag).sample_block(range(400)))
        vals[tag] = np.einsum("pa,pab->pb", w, U[ids])
    dev = vals["cov"] - vals["mean"].mean(axis=1, keepdims=True)
    assert C[0, 1] == pytest.approx(dev[0] @ dev[1] / 399, rel=1e-10)


def test_covariance_on_torus(cache):
    pts = np.array([[1.5, 0, 0], [2, 0.5, 0], [2.5, 0, 0]])
    t = ex.run_covariance(small(surface="torus", levels=(1,), mc_samples=50), pts, cache)
    assert t.column("N")[0] == 320


def test_slope_helpers():
    h = np.array([0.5, 0.25, 0.125])
    assert ex.loglog_slope(h, 3 * h**2) == pytest.approx(2.0)
    flat = ex.summarise_slope("weak", h, [0.1, 0.1, 0.1], 1.6)
    assert flat["slope"] == pytest.approx(0.0, abs=1e-12) and flat["status"] == "FAIL"
    assert ex.summarise_slope("strong", h, h**0.5, 0.5)["status"] == "ok"
    assert ex.strong_rate(0.75) == 0.5 and ex.weak_rate(0.9) == pytest.approx(1.6)
    assert ex.weak_rate(0.9, n=2) == 2.0
    with pytest.raises(ValueError):
        ex.loglog_slope([0.5], [1.0])


def test_convergence_summary_needs_three_levels():
    with pytest.raises(ConfigError):
        ex.run_convergence_summary(small(levels=(1, 2)))


def test_convergence_summary(cache):
    summary, tables = ex.run_convergence_summary(small(levels=(1, 2, 3)), cache)
    assert summary.column("quantity") == ["strong", "weak"]
    assert set(tables) == {"strong", "weak"}


def test_small_tables():
    t = ex.mesh_table(Sphere(), [0, 1])
    assert t.column("N") == [8, 26] and t.column("euler") == [2, 2]
    e = ex.eigen_table(Sphere(), 2, 0.5, 5)
    assert e.column("exact") == [0.25, 2.25, 2.25, 2.25, 6.25]
    s = ex.scalar_sinc_table(0.75, 1.0, count=20)
    assert s.meta["nodes"] == 331 and max(s.column("rel_error")) < 7.2e-7
