import numpy as np
import pytest

from confbvp import geometry, synthetic
from confbvp.errors import DefinitenessError, ParameterError
from confbvp.geometry import (
    GridManifold,
    MetricField,
    boundary_mean_curvature,
    christoffels,
    conformal_metric,
    curvature_bundle,
    diff1,
    diff1_matrix,
    diff2,
    diff2_matrix,
    distance_surrogate,
    extend_boundary_field,
    extend_boundary_pair,
    grad_all,
    normal_derivative,
    rel_eigensystem,
    rel_eigenvalues,
    ricci_scalar,
    schouten_t,
)

GRID = GridManifold(n=3, shape=(12, 12, 13))
HYP = synthetic.hyperbolic_slab(3)
FLAT = synthetic.flat(3)


def max_err(a, b):
    return float(np.max(np.abs(a - b)))


def observed_order(err_coarse, err_fine):
    return float(np.log2(err_coarse / err_fine))


def test_grid_invariants():
    with pytest.raises(ValueError):
        GridManifold(n=3, shape=(6, 12, 12))
    with pytest.raises(ValueError):
        GridManifold(n=3, shape=(12, 12))
    g = GridManifold(n=3, shape=(10, 12, 9))
    assert g.periodic == (True, True, False)
    assert g.spacing == (0.1, 1 / 12, 0.125)
    assert g.axis_coords(2)[0] == 0.0 and g.axis_coords(2)[-1] == 1.0


def test_refine_halves_spacings():
    g = GridManifold(n=3, shape=(12, 12, 13))
    f = g.refine()
    assert f.shape == (24, 24, 25)
    np.testing.assert_allclose(np.array(f.spacing), 0.5 * np.array(g.spacing))


@pytest.mark.parametrize("axis", [0, 1, 2])
def test_diff_matches_matrix(axis):
    rng = np.random.default_rng(0)
    F = rng.standard_normal(GRID.shape)
    flat_f = F.ravel()
    np.testing.assert_allclose(
        diff1(F, axis, GRID).ravel(),
        diff1_matrix(GRID, axis) @ flat_f,
        atol=1e-12,
    )
    np.testing.assert_allclose(
        diff2(F, axis, GRID).ravel(),
        diff2_matrix(GRID, axis) @ flat_f,
        atol=1e-11,
    )


def test_diff_exact_on_quadratics():
    # one-sided stencils are exact on quadratics in the normal coordinate
    y = GRID.coords()[..., 2]
    F = 1.0 + 2.0 * y + 3.0 * y**2
    np.testing.assert_allclose(diff1(F, 2, GRID), 2.0 + 6.0 * y, atol=1e-10)
    np.testing.assert_allclose(diff2(F, 2, GRID), 6.0, atol=1e-9)


def test_flat_christoffels_vanish():
    g = FLAT.metric(GRID)
    assert max_err(christoffels(g, GRID), 0.0) < 1e-12


def test_conformal_christoffel_oracle():
    # independent oracle: Gam^l_ij = u_i d_jl + u_j d_il - u_l d_ij with
    # analytic derivatives of u
    g = HYP.metric(GRID)
    gam = christoffels(g, GRID)
    du = HYP.u.grad(GRID.coords())
    eye = np.eye(3)
    exact = (
        np.einsum("...i,jl->...lij", du, eye)
        + np.einsum("...j,il->...lij", du, eye)
        - np.einsum("...l,ij->...lij", du, eye)
    )
    assert max_err(gam, exact) < 2e-2  # O(h^2) at h=1/12
    y = GRID.coords()[..., 2]
    np.testing.assert_allclose(gam[..., 2, 2, 2], -1.0 / (1.0 + y), atol=2e-2)


def test_christoffel_symmetry_exact():
    g = HYP.metric(GRID)
    gam = christoffels(g, GRID)
    np.testing.assert_array_equal(gam, np.swapaxes(gam, -1, -2))


def test_flat_curvature_zero():
    ric, scal = ricci_scalar(FLAT.metric(GRID), GRID)
    assert max_err(ric, 0.0) < 1e-10
    assert max_err(scal, 0.0) < 1e-10


def test_hyperbolic_curvature_with_rate():
    errs = []
    for grid in (GRID, GRID.refine()):
        g = HYP.metric(grid)
        ric, scal = ricci_scalar(g, grid)
        errs.append(max(max_err(ric, -2.0 * g.mat), max_err(scal, -6.0) / 3.0))
    order = observed_order(errs[0], errs[1])
    assert 1.7 <= order <= 2.3


def test_curvature_scaling_law():
    g = HYP.metric(GRID)
    ric, scal = ricci_scalar(g, GRID)
    g2 = MetricField(4.0 * g.mat)
    ric2, scal2 = ricci_scalar(g2, GRID)
    np.testing.assert_allclose(ric2, ric, atol=1e-9)
    np.testing.assert_allclose(scal2, scal / 4.0, atol=1e-9)


def test_schouten_values():
    g = HYP.metric(GRID)
    ric, scal = ricci_scalar(g, GRID)
    a0 = schouten_t(ric, scal, g, 0.0)
    np.testing.assert_allclose(a0, ric, atol=1e-14)  # t=0 is plain Ricci
    t = 0.5
    at = schouten_t(ric, scal, g, t)
    interior = (slice(None), slice(None), slice(1, -1))
    np.testing.assert_allclose(at[interior], ((-2.0 + 1.5 * t) * g.mat)[interior], atol=3e-2)
    np.testing.assert_allclose(at, (-2.0 + 1.5 * t) * g.mat, atol=0.16)
    zero = schouten_t(np.zeros_like(ric), np.zeros_like(scal), g, 0.5)
    assert max_err(zero, 0.0) == 0.0


def test_schouten_rejects_t_ge_1():
    g = FLAT.metric(GRID)
    ric, scal = ricci_scalar(g, GRID)
    with pytest.raises(ParameterError):
        schouten_t(ric, scal, g, 1.0)


def test_sigma1_trace_identity():
    # sigma_1 of the relative eigenvalues equals the trace formula in R
    from confbvp.symfunc import sigma_k

    for t in (0.0, 0.5):
        g = HYP.metric(GRID)
        b = curvature_bundle(g, GRID, t)
        lam = rel_eigenvalues(b.schouten, g)
        lhs = sigma_k(lam, 1)
        rhs = (1.0 - 3.0 * t / 4.0) * b.scalar  # n=3: (1/(n-2))(1 - nt/(2(n-1))) R
        scale = np.maximum(np.abs(rhs), 1e-30)
        assert np.max(np.abs(lhs - rhs) / scale) < 1e-10


def test_rel_eigenvalues_basics():
    g = MetricField(np.diag([1.0, 4.0, 9.0]))
    lam = rel_eigenvalues(np.diag([1.0, 2.0, 3.0]), g)
    np.testing.assert_allclose(lam, np.sort([1.0, 0.5, 1.0 / 3.0]), atol=1e-14)
    np.testing.assert_allclose(rel_eigenvalues(g.mat, g), 1.0, atol=1e-14)
    np.testing.assert_allclose(rel_eigenvalues(-2.0 * g.mat, g), -2.0, atol=1e-14)


def test_rel_eigenvalues_congruence_invariance():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((40, 3, 3))
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    B = rng.standard_normal((40, 3, 3))
    G = np.einsum("...ij,...kj->...ik", B, B) + 3.0 * np.eye(3)
    lam1 = rel_eigenvalues(A, MetricField(G))
    lam2 = rel_eigenvalues(2.5**2 * A, MetricField(2.5**2 * G))
    np.testing.assert_allclose(lam1, lam2, atol=1e-12)


def test_rel_eigensystem_is_g_orthonormal():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((10, 3, 3))
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    G = np.eye(3) + 0.3 * np.einsum(
        "...ij,...kj->...ik", rng.standard_normal((10, 3, 3)) * 0.2,
        rng.standard_normal((10, 3, 3)) * 0.0 + np.eye(3),
    )
    G = 0.5 * (G + np.swapaxes(G, -1, -2)) + np.eye(3)
    lam, U = rel_eigensystem(A, MetricField(G))
    gram = np.einsum("...ia,...ij,...jb->...ab", U, G, U)
    np.testing.assert_allclose(gram, np.broadcast_to(np.eye(3), gram.shape), atol=1e-10)
    recon = np.einsum("...ij,...ja->...ia", G, U) * lam[..., None, :]
    av = np.einsum("...ij,...ja->...ia", A, U)
    np.testing.assert_allclose(av, recon, atol=1e-10)


def test_cholesky_failure_reports_node():
    g = np.broadcast_to(np.eye(3), (4, 4, 4, 3, 3)).copy()
    g[1, 2, 3] = -np.eye(3)
    with pytest.raises(DefinitenessError) as err:
        geometry.cholesky(g)
    assert err.value.node == (1, 2, 3)


def test_flat_mean_curvature_zero():
    h0, h1 = boundary_mean_curvature(FLAT.metric(GRID), GRID)
    assert max_err(h0.values, 0.0) < 1e-12
    assert max_err(h1.values, 0.0) < 1e-12


def test_hyperbolic_mean_curvature():
    h0, h1 = boundary_mean_curvature(HYP.metric(GRID), GRID)
    np.testing.assert_allclose(h0.values, 1.0, atol=2e-2)
    np.testing.assert_allclose(h1.values, -1.0, atol=2e-2)


def test_mean_curvature_against_exact_both_sheets():
    bg = synthetic.conformal_custom(3, synthetic.random_smooth(3, seed=3, amplitude=0.2))
    g = bg.metric(GRID)
    h = boundary_mean_curvature(g, GRID)
    for sheet in (0, 1):
        exact = bg.mean_curvature_exact(GRID, sheet)
        assert max_err(h[sheet].values, exact) < 2e-2


def test_normal_derivative_sign():
    v = GRID.coords()[..., 2].copy()  # v = y_n
    g = FLAT.metric(GRID)
    d0 = normal_derivative(v, g, GRID, 0)
    d1 = normal_derivative(v, g, GRID, 1)
    np.testing.assert_allclose(d0, -1.0, atol=1e-10)
    np.testing.assert_allclose(d1, 1.0, atol=1e-10)


def test_extension_profile():
    zero = geometry.BoundaryField(np.zeros(GRID.shape[:-1]), 0)
    assert max_err(extend_boundary_field(zero, GRID), 0.0) == 0.0
    psi = geometry.BoundaryField(-np.ones(GRID.shape[:-1]), 0)
    ext = extend_boundary_field(psi, GRID)
    np.testing.assert_allclose(ext[GRID.sheet_index(0)], -1.0)
    yn = GRID.axis_coords(2)
    deep = yn >= 0.25
    assert max_err(ext[..., deep], 0.0) == 0.0
    assert np.all(ext <= 0.0)


def test_extension_pair_disjoint_supports():
    p0 = geometry.BoundaryField(np.full(GRID.shape[:-1], 2.0), 0)
    p1 = geometry.BoundaryField(np.full(GRID.shape[:-1], -3.0), 1)
    total = extend_boundary_pair((p0, p1), GRID)
    np.testing.assert_allclose(total[GRID.sheet_index(0)], 2.0)
    np.testing.assert_allclose(total[GRID.sheet_index(1)], -3.0)


def test_trace_extension_flat_vanishes():
    g = FLAT.metric(GRID)
    hf = geometry.BoundaryField(np.zeros(GRID.shape[:-1]), 0)
    ext = extend_boundary_field(hf, GRID, g=g, method="trace")
    assert max_err(ext, 0.0) < 1e-12


def test_trace_extension_matches_sheet_value():
    g = HYP.metric(GRID)
    h0, h1 = boundary_mean_curvature(g, GRID)
    for bf in (h0, h1):
        ext = extend_boundary_field(bf, GRID, g=g, method="trace")
        assert max_err(ext[GRID.sheet_index(bf.sheet)], bf.values) < 5e-3


def test_distance_surrogate_properties():
    for bg in (FLAT, HYP):
        g = bg.metric(GRID)
        w = distance_surrogate(g, GRID)
        assert w.min() >= 0.0 and w.max() <= 1.0
        assert max_err(w[GRID.sheet_index(0)], 0.0) < 1e-14
        assert max_err(w[GRID.sheet_index(1)], 0.0) < 1e-14
        for sheet in (0, 1):
            wn = normal_derivative(w, g, GRID, sheet)
            np.testing.assert_allclose(wn, -1.0, atol=1.2e-2)


def test_conformal_metric_helper():
    g = FLAT.metric(GRID)
    v = 0.3 * np.ones(GRID.shape)
    g2 = conformal_metric(g, v)
    np.testing.assert_allclose(g2.mat, np.exp(0.6) * g.mat)


def test_grad_all_shape():
    F = np.zeros(GRID.shape)
    assert grad_all(F, GRID).shape == GRID.shape + (3,)
