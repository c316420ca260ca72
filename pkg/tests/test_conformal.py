import numpy as np
import pytest

from confbvp import conformal, geometry, synthetic
from confbvp.geometry import (
    GridManifold,
    MetricField,
    boundary_mean_curvature,
    conformal_metric,
    curvature_bundle,
    rel_eigenvalues,
)

GRID = GridManifold(n=3, shape=(12, 12, 13))
HYP = synthetic.hyperbolic_slab(3)
FLAT = synthetic.flat(3)


def max_err(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def test_deformation_constant_v_vanishes():
    g = HYP.metric(GRID)
    W = conformal.deformation_tensor(np.full(GRID.shape, 0.7), g, GRID, t=0.0)
    assert max_err(W, 0.0) < 1e-10


def test_deformation_linear_v_flat():
    # v = y_1 on the flat metric: W = (2-t)/2 delta - e1 x e1 away from the seam
    t = 0.3
    g = FLAT.metric(GRID)
    v = GRID.coords()[..., 0].copy()
    W = conformal.deformation_tensor(v, g, GRID, t)
    expected = 0.5 * (2.0 - t) * np.eye(3)
    expected = expected.copy()
    expected[0, 0] -= 1.0
    inner = W[2:-2, :, :]
    assert max_err(inner, expected) < 1e-9


def test_gradient_outer_bound():
    # dv x dv <= |grad v|^2 g as quadratic forms, nodewise
    g = HYP.metric(GRID)
    v = synthetic.random_smooth(3, seed=9, amplitude=0.4)(GRID.coords())
    dv = geometry.grad_all(v, GRID)
    gsq = np.einsum("...ij,...i,...j->...", g.inverse(), dv, dv)
    M = gsq[..., None, None] * g.mat - dv[..., :, None] * dv[..., None, :]
    eig = np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))
    assert eig.min() > -1e-10


def test_deformation_quadratic_coupling_closed_form():
    t = 0.25
    g = HYP.metric(GRID)
    rng_v1 = synthetic.random_smooth(3, seed=1, amplitude=0.3)(GRID.coords())
    rng_v2 = synthetic.random_smooth(3, seed=2, amplitude=0.3)(GRID.coords())
    W12 = conformal.deformation_tensor(rng_v1 + rng_v2, g, GRID, t)
    W1 = conformal.deformation_tensor(rng_v1, g, GRID, t)
    W2 = conformal.deformation_tensor(rng_v2, g, GRID, t)
    d1 = geometry.grad_all(rng_v1, GRID)
    d2 = geometry.grad_all(rng_v2, GRID)
    dot = np.einsum("...ij,...i,...j->...", g.inverse(), d1, d2)
    cross = (
        (2.0 - t) * dot[..., None, None] * g.mat
        - d1[..., :, None] * d2[..., None, :]
        - d2[..., :, None] * d1[..., None, :]
    )
    np.testing.assert_allclose(W12 - W1 - W2, cross, atol=1e-9)


def test_pushforward_constant_shift():
    # constant v: no deformation, eigenvalues scale by e^{-2c}
    g = HYP.metric(GRID)
    c = 0.4
    _, lam = conformal.pushforward_schouten(np.full(GRID.shape, c), g, GRID, t=0.0)
    lam0 = rel_eigenvalues(curvature_bundle(g, GRID, 0.0).schouten, g)
    np.testing.assert_allclose(lam, np.exp(-2 * c) * lam0, atol=1e-12)
    np.testing.assert_allclose(-lam, np.exp(-2 * c) * 2.0, atol=3e-1)


def test_pushforward_identity_at_zero():
    g = HYP.metric(GRID)
    A, lam = conformal.pushforward_schouten(np.zeros(GRID.shape), g, GRID, t=0.0)
    bundle = curvature_bundle(g, GRID, 0.0)
    np.testing.assert_allclose(A, bundle.schouten, atol=1e-12)
    np.testing.assert_allclose(lam, rel_eigenvalues(bundle.schouten, g), atol=1e-12)


@pytest.mark.parametrize("t", [0.0, 0.5])
def test_two_path_eigenvalues_converge(t):
    # transport route vs direct curvature of e^{2v} g: O(h^2) agreement
    v_fn = synthetic.random_smooth(3, seed=5, amplitude=0.2)
    errs = []
    for grid in (GRID, GRID.refine()):
        g = HYP.metric(grid)
        v = v_fn(grid.coords())
        _, lam_push = conformal.pushforward_schouten(v, g, grid, t)
        g_new = conformal_metric(g, v)
        lam_direct = rel_eigenvalues(
            curvature_bundle(g_new, grid, t).schouten, g_new
        )
        errs.append(max_err(lam_push, lam_direct))
    order = np.log2(errs[0] / errs[1])
    assert 1.7 <= order <= 2.3, (errs, order)


def test_two_path_mean_curvature_converges():
    v_fn = synthetic.random_smooth(3, seed=6, amplitude=0.2)
    errs = []
    for grid in (GRID, GRID.refine()):
        g = HYP.metric(grid)
        v = v_fn(grid.coords())
        push = conformal.pushforward_mean_curvature(v, g, grid)
        direct = boundary_mean_curvature(conformal_metric(g, v), grid)
        errs.append(
            max(max_err(p.values, d.values) for p, d in zip(push, direct))
        )
    order = np.log2(errs[0] / errs[1])
    assert 1.7 <= order <= 2.3, (errs, order)


def test_pushforward_mean_curvature_examples():
    g = FLAT.metric(GRID)
    # constant shift: h e^{-c}
    h1 = conformal.pushforward_mean_curvature(
        np.full(GRID.shape, np.log(2.0)), HYP.metric(GRID), GRID
    )
    h0 = boundary_mean_curvature(HYP.metric(GRID), GRID)
    for a, b in zip(h1, h0):
        np.testing.assert_allclose(a.values, 0.5 * b.values, atol=2e-2)
    # v = y_n on flat, sheet 0 (nu = -d_n): h_new = -1
    v = GRID.coords()[..., 2].copy()
    out = conformal.pushforward_mean_curvature(v, g, GRID)
    np.testing.assert_allclose(out[0].values, -1.0, atol=1e-10)
    np.testing.assert_allclose(out[1].values, np.exp(-1.0), atol=1e-10)


def test_zero_mean_curvature_gauge():
    for grid in (GridManifold(3, (16, 16, 17)), GridManifold(3, (32, 32, 33))):
        g = HYP.metric(grid)
        g1, v0 = conformal.zero_mean_curvature_gauge(g, grid)
        h1 = boundary_mean_curvature(g1, grid)
        hmax = max(np.max(np.abs(b.values)) for b in h1)
        assert hmax <= 6.0 * grid.spacing[-1] ** 2, hmax
        # two-path consistency: transporting by v0 gives the same curve
        push = conformal.pushforward_mean_curvature(v0, g, grid)
        for a, b in zip(push, h1):
            assert max_err(a.values, b.values) <= 6.0 * grid.spacing[-1] ** 2


def test_zero_gauge_trivial_when_h_zero():
    grid = GridManifold(3, (16, 16, 17))
    g = FLAT.metric(grid)
    g1, v0 = conformal.zero_mean_curvature_gauge(g, grid)
    assert max_err(v0, 0.0) < 1e-12
    assert max_err(g1.mat, g.mat) < 1e-12


def test_gauge_idempotence():
    grid = GridManifold(3, (16, 16, 17))
    g = HYP.metric(grid)
    g1, _ = conformal.zero_mean_curvature_gauge(g, grid)
    g2, v01 = conformal.zero_mean_curvature_gauge(g1, grid)
    assert np.max(np.abs(v01)) <= 10.0 * grid.spacing[-1] ** 2


def test_ricci_pinch_gauge():
    grid = GridManifold(3, (16, 16, 17))
    g = FLAT.metric(grid)
    g1, _ = conformal.zero_mean_curvature_gauge(g, grid)
    assert max_err(conformal.ricci_pinch_gauge(g1, grid, 0.0).mat, g1.mat) == 0.0
    # collar Ricci ceilings decrease monotonically with A
    ceilings = [
        conformal.collar_ricci_ceiling(
            conformal.ricci_pinch_gauge(g1, grid, A), g1, grid
        )
        for A in (0.5, 1.0, 2.0)
    ]
    assert ceilings[0] > ceilings[1] > ceilings[2]
    # the computed pinch amplitude drives the collar ceiling below -1
    A = conformal.pinch_constant(g1, grid)
    g2 = conformal.ricci_pinch_gauge(g1, grid, A)
    assert conformal.collar_ricci_ceiling(g2, g1, grid) <= -1.0
    # and keeps the boundary mean curvature at zero
    h2 = boundary_mean_curvature(g2, grid)
    assert max(np.max(np.abs(b.values)) for b in h2) <= 10.0 * grid.spacing[-1] ** 2


def test_epsilon0_gauge_hyperbolic():
    from confbvp.symfunc import ConePair

    grid = GridManifold(3, (16, 16, 17))
    g = HYP.metric(grid)
    g0, eps0, w = conformal.epsilon0_gauge(g, grid, ConePair(1, 3), 0.0)
    assert 0.0 < eps0 <= 0.5
    ok, fvals, _ = conformal.admissible_f(g0, grid, ConePair(1, 3), 0.0)
    assert ok
    _, f_bg, _ = conformal.admissible_f(g, grid, ConePair(1, 3), 0.0)
    assert fvals.min() >= 0.5 * f_bg.min() - 1e-12


def test_collar_gauge_drives_h_negative():
    # h-transformation side of the collar gauge: on an h <= 0 background,
    # e^{2 eps w} g has boundary mean curvature below -eps e^{-eps}
    grid = GridManifold(3, (16, 16, 17))
    bump = synthetic.SmoothScalar(n=3, terms=((1.0, (0, 0), 0.0, (0.0, 0.5, -0.5)),))
    bg = synthetic.conformal_custom(3, bump)
    g = bg.metric(grid)
    h = boundary_mean_curvature(g, grid)
    for b in h:
        assert np.max(b.values) < 0.0  # concave bump: h = -0.5 on both sheets
    eps = 0.3
    w = geometry.distance_surrogate(g, grid)
    g0 = conformal_metric(g, eps * w)
    h0 = boundary_mean_curvature(g0, grid)
    slack = 10.0 * grid.spacing[-1] ** 2
    for b in h0:
        assert np.max(b.values) <= -eps * np.exp(-eps) + slack
