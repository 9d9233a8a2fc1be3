import numpy as np
import pytest
import scipy.sparse as sp
from scipy.integrate import dblquad

from surface_grf import fem
from surface_grf.exceptions import NotPositiveDefinite
from surface_grf.geometry import Sphere
from surface_grf.mesh import SurfaceMesh, make_mesh
from surface_grf.spectral import q_lm

EXACT = {1: 2.25, 2: 6.25}  # kappa = 0.5: kappa^2 + l(l+1)
EXACT_FIRST9 = np.array([0.25] + [2.25] * 3 + [6.25] * 5)


def flat_square():
    v = np.array([[0, 0, 1.0], [1, 0, 1], [1, 1, 1], [0, 1, 1]])
    return SurfaceMesh(v, np.array([[0, 1, 2, 3]]), Sphere(), 0)


def test_flat_element_matrices():
    m = flat_square()
    M = fem.assemble_mass(m).toarray()
    A = fem.assemble_stiffness(m).toarray()
    assert np.trace(M) == pytest.approx(4 / 9, rel=1e-14)
    np.testing.assert_allclose(np.diag(M), 1 / 9, rtol=1e-14)
    np.testing.assert_allclose(np.diag(A), 2 / 3, rtol=1e-14)
    assert A[0, 2] == pytest.approx(-1 / 3, rel=1e-14)


def test_gauss_square_integrates_polynomials():
    uv, w = fem.gauss_square(4)
    # degree 7 per variable is exact for 4 points
    assert np.sum(w * uv[:, 0] ** 7 * uv[:, 1] ** 6) == pytest.approx(1 / 56, rel=1e-13)


def test_mass_properties(sphere_meshes, sphere_matrices):
    M, _, _ = sphere_matrices[0]
    assert M.sum() == pytest.approx(8.0, rel=1e-13)
    for level, (M, A, Ms) in sphere_matrices.items():
        assert abs(M - M.T).max() == 0
        assert abs(Ms - Ms.T).max() == 0
        assert abs(A - A.T).max() == 0
        assert np.all(np.asarray(Ms.sum(axis=1)) > 0)
        assert M.sum() == pytest.approx(
            np.sum(fem.quadrature_points(sphere_meshes[level], 2)[1]), rel=1e-12)


def test_weighted_mass_total_is_surface_area(sphere_matrices, torus):
    totals = [sphere_matrices[l][2].sum() for l in range(4)]
    assert totals[3] == pytest.approx(4 * np.pi, abs=1e-6)
    Mt = fem.assemble_weighted_mass(make_mesh(torus, 2))
    assert Mt.sum() == pytest.approx(4 * np.pi**2 * 2 * 0.5, abs=1e-6)


def test_weighted_mass_discrepancy_shrinks_like_h2(sphere_matrices):
    gaps = [abs(sphere_matrices[l][2] - sphere_matrices[l][0]).max()
            / abs(sphere_matrices[l][0]).max() for l in range(1, 4)]
    for a, b in zip(gaps, gaps[1:]):
        assert 3 <= a / b <= 5


def test_stiffness_kernel_and_semidefinite(sphere_matrices):
    for _, A, _ in sphere_matrices.values():
        assert np.max(np.abs(A @ np.ones(A.shape[0]))) <= 1e-10
    A = sphere_matrices[2][1].toarray()
    assert np.linalg.eigvalsh(A).min() >= -1e-10


def test_cholesky_examples():
    f = fem.cholesky(sp.csc_matrix([[4.0]]))
    np.testing.assert_allclose(f.G.toarray(), [[2.0]])
    f = fem.cholesky(sp.identity(5, format="csc"))
    np.testing.assert_allclose(f.G.toarray(), np.eye(5))
    assert f.reconstruction_error(sp.identity(5)) == 0


def test_cholesky_reconstruction(sphere_matrices):
    for level in (0, 3):
        Ms = sphere_matrices[level][2]
        f = fem.cholesky(Ms)
        assert f.reconstruction_error(Ms) <= 1e-12
        G = f.G.toarray()
        assert np.allclose(G, np.tril(G))
        z = np.random.default_rng(0).normal(size=(Ms.shape[0], 3))
        x = f.correlate(z)
        # cov of correlate(z) is G G^T in the original ordering
        P = np.eye(Ms.shape[0])[f.perm]
        np.testing.assert_allclose(P.T @ G @ G.T @ P, Ms.toarray(), atol=1e-14)
        np.testing.assert_allclose(f.solve(Ms @ x), x, rtol=1e-10)


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        fem.cholesky(sp.csc_matrix([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotPositiveDefinite):
        fem.cholesky(sp.csc_matrix([[-1.0]]))


@pytest.mark.parametrize("method", ["cg", "direct"])
def test_solve_shifted(sphere_matrices, method):
    M, A, _ = sphere_matrices[3]
    kappa, mu = 0.5, 3.7
    K = (mu + kappa**2) * M + A
    n = M.shape[0]
    u = fem.solve_shifted(M, A, kappa, mu, K @ np.ones(n), method=method)
    np.testing.assert_allclose(u, 1.0, atol=1e-9)
    np.testing.assert_array_equal(fem.solve_shifted(M, A, kappa, mu, np.zeros(n), method=method), 0)
    b = np.random.default_rng(1).normal(size=n)
    u = fem.solve_shifted(M, A, kappa, mu, b, method=method)
    r = b - K @ u
    assert np.linalg.norm(r) / np.linalg.norm(b) <= 1e-10
    # Galerkin orthogonality: the residual is tested against every basis function
    assert np.max(np.abs(r)) <= 1e-10 * np.linalg.norm(b)


def test_solve_shifted_needs_positive_shift(sphere_matrices):
    M, A, _ = sphere_matrices[1]
    with pytest.raises(ValueError):
        fem.solve_shifted(M, A, 0.0, 0.0, np.ones(M.shape[0]))


def test_solve_shifted_reports_no_convergence(sphere_matrices):
    from surface_grf.exceptions import NoConvergence
    M, A, _ = sphere_matrices[3]
    b = np.random.default_rng(2).normal(size=M.shape[0])
    with pytest.raises(NoConvergence):
        fem.solve_shifted(M, A, 0.5, 0.0, b, maxiter=2)


def test_first_eigenvalue(sphere_matrices):
    M, A, _ = sphere_matrices[3]
    lam = fem.smallest_eigenpairs(A, M, 0.5, 1)
    assert lam[0] == pytest.approx(0.25, abs=1e-8)


def test_eigenvalues_upper_bounds_with_h2_gap(sphere_matrices, sphere_meshes):
    mats = dict(sphere_matrices)
    m4 = sphere_meshes[4]
    mats[4] = (fem.assemble_mass(m4), fem.assemble_stiffness(m4), None)
    lams = {l: fem.smallest_eigenpairs(mats[l][1], mats[l][0], 0.5, 9) for l in (2, 3, 4)}
    for lam in lams.values():
        assert np.all(lam >= EXACT_FIRST9 - 1e-10)
    np.testing.assert_allclose(lams[3][1:4], 2.25, rtol=0.02)
    for coarse, fine in ((2, 3), (3, 4)):
        ratio = (lams[coarse] - EXACT_FIRST9)[1:] / (lams[fine] - EXACT_FIRST9)[1:]
        assert np.all((ratio >= 3) & (ratio <= 5))


def test_eigen_limits(sphere_matrices):
    M, A, _ = sphere_matrices[1]
    with pytest.raises(ValueError):
        fem.smallest_eigenpairs(A, M, 0.5, 21)


def test_project_function(sphere_meshes, sphere_matrices):
    mesh = sphere_meshes[3]
    Ms = sphere_matrices[3][2]
    b1 = fem.project_function(mesh, lambda x: np.ones(x.shape[:-1]))
    assert b1.sum() == pytest.approx(4 * np.pi, abs=1e-6)
    q00 = 1 / np.sqrt(4 * np.pi)
    b = fem.project_function(mesh, lambda x: np.full(x.shape[:-1], q00))
    np.testing.assert_allclose(b, q00 * np.asarray(Ms.sum(axis=1)).ravel(), rtol=1e-12)
    b10 = fem.project_function(mesh, lambda x: q_lm(1, 0, np.arccos(x[..., 2])))
    assert abs(b10.sum()) <= 1e-8
    # several functions at once
    both = fem.project_function(mesh, lambda x: np.stack([np.ones(x.shape[:-1]), x[..., 2]], -1))
    np.testing.assert_allclose(both[:, 0], b1, rtol=1e-13)


def test_l2_norms(sphere_meshes, sphere_matrices):
    mesh = sphere_meshes[2]
    M = sphere_matrices[2][0]
    assert fem.l2_norm(M, np.ones(mesh.n_vertices)) ** 2 == pytest.approx(M.sum(), rel=1e-14)
    q00 = 1 / np.sqrt(4 * np.pi)
    err = fem.l2_error_vs_function(mesh, np.zeros(mesh.n_vertices),
                                   lambda x: np.full(x.shape[:-1], q00))
    # ||q00||^2 on Gamma is |Gamma| / 4 pi, which tends to 1 like h^2
    assert err == pytest.approx(1.0, abs=0.05)
    assert err**2 == pytest.approx(fem.quadrature_points(mesh)[1].sum() * q00**2, rel=1e-12)


def test_l2_error_of_linear_function_is_quadrature_limited(sphere_meshes):
    # x_3 restricted to a flat chart is bilinear in (u, v), so the interpolant is exact
    mesh = sphere_meshes[2]
    z = mesh.vertices[:, 2]
    flat = SurfaceMesh(mesh.vertices, mesh.quads, mesh.surface, mesh.level)
    err = fem.l2_error_vs_function(flat, z, lambda x: x[..., 2])
    # f o P differs from the planar interpolant only by the lift, O(h^2)
    assert err < 0.05


def test_mass_against_adaptive_quadrature():
    # one curved quad: the (0, 0) entry of the weighted mass equals int sigma phi_0^2 dA
    c = 1 / np.sqrt(3)
    v = np.array([[c, -c, -c], [c, c, -c], [c, c, c], [c, -c, c]])
    mesh = SurfaceMesh(v, np.array([[0, 1, 2, 3]]), Sphere(), 0)
    Ms = fem.assemble_weighted_mass(mesh).toarray()
    from surface_grf.geometry import area_ratio

    def integrand(vv, uu):
        sig = area_ratio(Sphere(), v, np.array([[uu, vv]]))[0]
        return sig * ((1 - uu) * (1 - vv)) ** 2 * (2 * c) ** 2

    ref, _ = dblquad(integrand, 0, 1, 0, 1, epsabs=1e-12)
    assert Ms[0, 0] == pytest.approx(ref, rel=1e-3)
