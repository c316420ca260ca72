"""Conformal transformation calculus and metric-preparation gauges.

Central object: the deformation tensor of a conformal exponent v,

    W(v) = Hess_g v + (1-t)/(n-2) (Lap_g v) g + (2-t)/2 |grad v|^2 g - dv x dv,

which transports the trace-modified Schouten tensor as A_new = A - W(v)
(as (0,2) tensors) and the boundary mean curvature as h_new = (h + v_nu) e^-v.
The governing equation's interior residual is f(lambda_g(W - A)) - phi e^{2v}.

Note the transported-tensor convention: combined with the conformal factor
e^{-2v} on relative eigenvalues it reproduces the governing reformulation
exactly, and the two-path tests (transport vs. curvature of e^{2v} g computed
from scratch) pin it down.
"""

from __future__ import annotations

import numpy as np

from . import geometry, symfunc
from .geometry import (
    BoundaryField,
    GridManifold,
    MetricField,
    boundary_mean_curvature,
    christoffels,
    conformal_metric,
    curvature_bundle,
    diff_mixed,
    distance_surrogate,
    extend_boundary_pair,
    grad_all,
    normal_derivative,
    rel_eigenvalues,
)


def covariant_hessian(
    v: np.ndarray, g: MetricField, grid: GridManifold, gamma: np.ndarray | None = None
) -> np.ndarray:
    """(nabla^2 v)_ij = d_i d_j v - Gam^l_ij d_l v."""
    if gamma is None:
        gamma = christoffels(g, grid)
    n = grid.n
    hess = np.empty(grid.shape + (n, n))
    for a in range(n):
        for b in range(a, n):
            d = diff_mixed(v, a, b, grid)
            hess[..., a, b] = d
            hess[..., b, a] = d
    dv = grad_all(v, grid)
    return hess - np.einsum("...lij,...l->...ij", gamma, dv)


def deformation_tensor(
    v: np.ndarray,
    g: MetricField,
    grid: GridManifold,
    t: float,
    gamma: np.ndarray | None = None,
) -> np.ndarray:
    """The conformal deformation tensor W(v); vanishes for constant v."""
    n = grid.n
    ginv = g.inverse()
    hess = covariant_hessian(v, g, grid, gamma)
    dv = grad_all(v, grid)
    lap = np.einsum("...ij,...ij->...", ginv, hess)
    grad_sq = np.einsum("...ij,...i,...j->...", ginv, dv, dv)
    W = hess.copy()
    W += ((1.0 - t) / (n - 2.0)) * lap[..., None, None] * g.mat
    W += 0.5 * (2.0 - t) * grad_sq[..., None, None] * g.mat
    W -= dv[..., :, None] * dv[..., None, :]
    return W


def pushforward_schouten(
    v: np.ndarray,
    g: MetricField,
    grid: GridManifold,
    t: float,
    schouten: np.ndarray | None = None,
    gamma: np.ndarray | None = None,
):
    """Transported modified Schouten tensor of e^{2v} g and its eigenvalues
    relative to the new metric.

    Returns (A_new as a (0,2) field, lambda_new ascending).  lambda_new equals
    e^{-2v} times the eigenvalues of (A - W) relative to g, which is the
    identity the direct-curvature oracle cross-checks at O(h^2).
    """
    if schouten is None:
        schouten = curvature_bundle(g, grid, t).schouten
    W = deformation_tensor(v, g, grid, t, gamma)
    A_new = schouten - W
    lam_new = np.exp(-2.0 * v)[..., None] * rel_eigenvalues(A_new, g)
    return A_new, lam_new


def pushforward_mean_curvature(
    v: np.ndarray,
    g: MetricField,
    grid: GridManifold,
    h_pair=None,
):
    """Transported mean curvature (h + v_nu) e^{-v} on both sheets."""
    if h_pair is None:
        h_pair = boundary_mean_curvature(g, grid)
    out = []
    for bf in h_pair:
        vn = normal_derivative(v, g, grid, bf.sheet)
        vs = v[grid.sheet_index(bf.sheet)]
        out.append(BoundaryField((bf.values + vn) * np.exp(-vs), bf.sheet))
    return tuple(out)


# ---------------------------------------------------------------------------
# gauges


def zero_mean_curvature_gauge(
    g: MetricField, grid: GridManifold, extension_width: float = 0.45
):
    """Conformal change killing the boundary mean curvature.

    v0 is the extended mean curvature times the distance surrogate, whose
    outward normal derivative is -1 on both sheets, so h transports to zero
    up to O(h^2).  The extension uses a wider collar than the standalone
    extension op so its drop-off stays outside the reach of the one-sided
    sheet stencils (the two sheets' collars stay disjoint).  Returns (g1, v0).
    """
    h_pair = boundary_mean_curvature(g, grid)
    h_ext = extend_boundary_pair(h_pair, grid, width=extension_width)
    w = distance_surrogate(g, grid)
    v0 = h_ext * w
    return conformal_metric(g, v0), v0


def ricci_pinch_gauge(g1: MetricField, grid: GridManifold, A: float) -> MetricField:
    """g2 = e^{2 A w1^2} g1 with w1 the distance surrogate of g1.

    Pushes the collar Ricci down by roughly 2 A g1 while keeping the boundary
    mean curvature at zero (the conformal exponent vanishes quadratically at
    the sheets).
    """
    if A < 0:
        raise ValueError("pinch amplitude A must be >= 0")
    w1 = distance_surrogate(g1, grid)
    return conformal_metric(g1, A * w1**2)


def collar_mask(grid: GridManifold, depth: float = 0.125) -> np.ndarray:
    yn = grid.axis_coords(grid.n - 1)
    mask = np.minimum(yn, 1.0 - yn) <= depth
    return np.broadcast_to(mask, grid.shape)


def pinch_constant(g1: MetricField, grid: GridManifold, depth: float = 0.125) -> float:
    """Pinch amplitude driving the collar Ricci ceiling below -1.

    Seeds A = C1/2 + 1/2 with C1 the collar Ricci ceiling of g1 (the value
    that pins the sheet itself below -1 in the continuum), then verifies the
    whole collar numerically and grows A geometrically until it passes; the
    continuum inequality is exact only on the sheet, so a modest bump can be
    needed for the collar interior at finite h.
    """
    ric, _ = geometry.ricci_scalar(g1, grid)
    lam = rel_eigenvalues(ric, g1)[..., -1]
    c1 = float(lam[collar_mask(grid, depth)].max())
    A = 0.5 * c1 + 0.5
    for _ in range(12):
        g2 = ricci_pinch_gauge(g1, grid, A)
        if collar_ricci_ceiling(g2, g1, grid, depth) <= -1.0:
            return A
        A *= 1.3
    return A


def collar_ricci_ceiling(
    g2: MetricField, g1: MetricField, grid: GridManifold, depth: float = 0.125
) -> float:
    """Largest eigenvalue of Ric_{g2} relative to g1 over the boundary collar."""
    ric2, _ = geometry.ricci_scalar(g2, grid)
    lam = rel_eigenvalues(ric2, g1)[..., -1]
    return float(lam[collar_mask(grid, depth)].max())


def admissible_f(
    g: MetricField, grid: GridManifold, cone, t: float, bundle=None
):
    """(-lambda of A^t in the cone at all nodes?, f values where admissible).

    f is evaluated with the sign-extended surrogate where the cone membership
    fails, so callers can still form sup/inf style bounds with a flag.
    """
    if bundle is None:
        bundle = curvature_bundle(g, grid, t)
    neg_lam = -rel_eigenvalues(bundle.schouten, g)
    inside, margin = symfunc.cone_contains(neg_lam, cone)
    fvals = symfunc.f_eval_unsafe(neg_lam, cone)
    return bool(np.all(inside)), fvals, margin


def epsilon0_gauge(g: MetricField, grid: GridManifold, cone, t: float):
    """Largest eps0 <= 1/2 whose collar gauge e^{2 eps0 w} g keeps the
    background admissible with at least half of its operator floor.

    Returns (g0, eps0, w).  Mirrors the lower-bound gauge construction: the
    gauge buys strictly negative boundary mean curvature at the price of a
    curvature perturbation that shrinks with eps0, so a bisection finds the
    workable range.
    """
    w = distance_surrogate(g, grid)
    ok, f_bg, _ = admissible_f(g, grid, cone, t)
    if not ok:
        raise ValueError("background itself is not admissible")
    floor = 0.5 * float(f_bg.min())

    def acceptable(eps: float) -> bool:
        g0 = conformal_metric(g, eps * w)
        inside, fvals, _ = admissible_f(g0, grid, cone, t)
        return inside and float(fvals.min()) >= floor

    if acceptable(0.5):
        return conformal_metric(g, 0.5 * w), 0.5, w
    lo, hi = 0.0, 0.5
    for _ in range(20):
        mid = 0.5 * (lo + hi)
        if acceptable(mid):
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise ValueError("no positive eps0 keeps the gauge admissible")
    return conformal_metric(g, lo * w), lo, w


# ---------------------------------------------------------------------------
# governing residual


def residual(v: np.ndarray, spec):
    """Residual of the governing equation at conformal exponent v.

    interior = f(lambda_g(W(v) - A)) - phi e^{2v}; boundary = h + v_nu - e^v psi
    per sheet; cone_margin is the signed cone margin field (the interior value
    is a sign-extended surrogate wherever the margin is negative, and the
    Newton guard consumes the margin rather than erroring here).
    """
    ws = spec.workspace()
    W = deformation_tensor(v, ws.g, ws.grid, ws.t, ws.gamma)
    lam = rel_eigenvalues(W - ws.schouten, ws.g)
    _, margin = symfunc.cone_contains(lam, ws.cone)
    interior = symfunc.f_eval_unsafe(lam, ws.cone) - ws.phi * np.exp(2.0 * v)
    boundary = []
    for bf, psi in zip(ws.h_pair, ws.psi_pair):
        vn = normal_derivative(v, ws.g, ws.grid, bf.sheet)
        vs = v[ws.grid.sheet_index(bf.sheet)]
        boundary.append(
            BoundaryField(bf.values + vn - np.exp(vs) * psi.values, bf.sheet)
        )
    return interior, tuple(boundary), margin
