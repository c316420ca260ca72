"""Analytic backgrounds, smooth random fields, and manufactured problems.

Metrics here are conformal to the flat slab metric, g = e^(2u) delta, with u
given in closed form so that tests can cross-check the discrete curvature
pipeline against the conformally-flat curvature formulas with analytic
derivatives of u.  Fields carry their continuum definition and can be
re-sampled on any grid, which is what refinement studies need.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import symfunc
from .geometry import (
    BoundaryField,
    GridManifold,
    MetricField,
    boundary_mean_curvature,
    conformal_metric,
    curvature_bundle,
    rel_eigenvalues,
)


@dataclasses.dataclass(frozen=True)
class SmoothScalar:
    """Trig-polynomial-in-y' times polynomial-in-y_n scalar function.

    terms: tuples (amplitude, wave vector over tangential axes, phase,
    polynomial coefficients in y_n, lowest power first).  Everything is
    periodic tangentially by construction; derivatives are analytic.
    """

    n: int
    terms: tuple = ()

    def _parts(self, pts: np.ndarray):
        yt = pts[..., : self.n - 1]
        yn = pts[..., -1]
        for amp, kvec, phase, poly in self.terms:
            kvec = np.asarray(kvec, dtype=float)
            ang = 2.0 * np.pi * np.einsum("...i,i->...", yt, kvec) + phase
            yield amp, kvec, ang, np.asarray(poly, dtype=float), yn

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1])
        for amp, _, ang, poly, yn in self._parts(pts):
            out += amp * np.cos(ang) * np.polynomial.polynomial.polyval(yn, poly)
        return out

    def grad(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape)
        for amp, kvec, ang, poly, yn in self._parts(pts):
            p = np.polynomial.polynomial.polyval(yn, poly)
            dp = np.polynomial.polynomial.polyval(
                yn, np.polynomial.polynomial.polyder(poly)
            )
            out[..., : self.n - 1] += (
                -amp * 2.0 * np.pi * np.sin(ang)[..., None] * kvec * p[..., None]
            )
            out[..., -1] += amp * np.cos(ang) * dp
        return out

    def hess(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape + (self.n,))
        pp = np.polynomial.polynomial
        for amp, kvec, ang, poly, yn in self._parts(pts):
            p = pp.polyval(yn, poly)
            dp = pp.polyval(yn, pp.polyder(poly))
            ddp = pp.polyval(yn, pp.polyder(poly, 2))
            cos, sin = np.cos(ang), np.sin(ang)
            kk = np.einsum("i,j->ij", kvec, kvec)
            out[..., : self.n - 1, : self.n - 1] += (
                -amp * (2 * np.pi) ** 2 * cos[..., None, None] * kk * p[..., None, None]
            )
            cross = -amp * 2.0 * np.pi * sin[..., None] * kvec * dp[..., None]
            out[..., : self.n - 1, -1] += cross
            out[..., -1, : self.n - 1] += cross
            out[..., -1, -1] += amp * cos * ddp
        return out


@dataclasses.dataclass(frozen=True)
class LogSlabFactor:
    """u = c * ln(a + b y_n); b=-1, a=2 flips the shrinking sheet."""

    n: int
    a: float = 1.0
    b: float = 1.0
    c: float = -1.0

    def __call__(self, pts):
        return self.c * np.log(self.a + self.b * np.asarray(pts)[..., -1])

    def grad(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape)
        out[..., -1] = self.c * self.b / (self.a + self.b * pts[..., -1])
        return out

    def hess(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape + (self.n,))
        out[..., -1, -1] = -self.c * self.b**2 / (self.a + self.b * pts[..., -1]) ** 2
        return out


@dataclasses.dataclass(frozen=True)
class Background:
    """A conformally flat slab metric with an analytic conformal factor."""

    name: str
    grid_n: int
    u: object | None  # None means flat

    def metric(self, grid: GridManifold) -> MetricField:
        eye = np.eye(grid.n)
        if self.u is None:
            return MetricField(np.broadcast_to(eye, grid.shape + (grid.n, grid.n)).copy())
        uu = self.u(grid.coords())
        return MetricField(np.exp(2.0 * uu)[..., None, None] * eye)

    def u_samples(self, grid: GridManifold) -> np.ndarray:
        if self.u is None:
            return np.zeros(grid.shape)
        return self.u(grid.coords())

    # conformally flat closed forms (analytic oracle, partial derivatives of u)
    def ricci_exact(self, grid: GridManifold) -> np.ndarray:
        n = grid.n
        pts = grid.coords()
        if self.u is None:
            return np.zeros(grid.shape + (n, n))
        du = self.u.grad(pts)
        d2u = self.u.hess(pts)
        lap = np.trace(d2u, axis1=-2, axis2=-1)
        gsq = np.einsum("...i,...i->...", du, du)
        outer = du[..., :, None] * du[..., None, :]
        eye = np.eye(n)
        return (
            -(n - 2.0) * (d2u - outer)
            - (lap + (n - 2.0) * gsq)[..., None, None] * eye
        )

    def scalar_exact(self, grid: GridManifold) -> np.ndarray:
        n = grid.n
        pts = grid.coords()
        if self.u is None:
            return np.zeros(grid.shape)
        du = self.u.grad(pts)
        d2u = self.u.hess(pts)
        lap = np.trace(d2u, axis1=-2, axis2=-1)
        gsq = np.einsum("...i,...i->...", du, du)
        uu = self.u(pts)
        return np.exp(-2.0 * uu) * (
            -2.0 * (n - 1.0) * lap - (n - 1.0) * (n - 2.0) * gsq
        )

    def mean_curvature_exact(self, grid: GridManifold, sheet: int) -> np.ndarray:
        """h = (h_flat + du/dnu) e^(-u) on the sheet; h_flat = 0."""
        pts = grid.coords()[grid.sheet_index(sheet)]
        if self.u is None:
            return np.zeros(pts.shape[:-1])
        sign = -1.0 if sheet == 0 else 1.0
        dun = sign * self.u.grad(pts)[..., -1]
        return dun * np.exp(-self.u(pts))


def flat(n: int = 3) -> Background:
    return Background("flat", n, None)


def hyperbolic_slab(n: int = 3) -> Background:
    """g = (1 + y_n)^(-2) delta: Ric = -(n-1) g, R = -n(n-1), h = (+1, -1)."""
    return Background("hyperbolic_slab", n, LogSlabFactor(n=n))


def conformal_custom(n: int, u: SmoothScalar, name: str = "conformal_custom") -> Background:
    return Background(name, n, u)


def random_smooth(
    n: int,
    seed: int,
    amplitude: float = 0.1,
    modes: int = 2,
    max_wave: int = 2,
) -> SmoothScalar:
    """Seeded smooth scalar: a few low tangential modes with mild y_n polys.

    The same object re-samples consistently on refined grids, which is what
    the convergence-order measurements rely on.
    """
    rng = np.random.default_rng(seed)
    terms = []
    for _ in range(modes):
        kvec = rng.integers(-max_wave, max_wave + 1, size=n - 1)
        amp = amplitude * rng.uniform(0.3, 1.0) / modes
        phase = rng.uniform(0.0, 2.0 * np.pi)
        poly = rng.uniform(-1.0, 1.0, size=3)
        terms.append((amp, tuple(int(k) for k in kvec), float(phase), tuple(poly)))
    # one purely normal mode so the boundary sees variation
    terms.append(
        (amplitude * 0.5, (0,) * (n - 1), 0.0, tuple(rng.uniform(-1.0, 1.0, size=3)))
    )
    return SmoothScalar(n=n, terms=tuple(terms))


# ---------------------------------------------------------------------------
# ready-made problems


def _spec(grid, g, k, t, phi, psi_pair, **kw):
    from .pde import ProblemSpec

    return ProblemSpec(
        grid=grid,
        g=g,
        cone=symfunc.ConePair(k=k, n=grid.n),
        t=t,
        phi=phi,
        psi=psi_pair,
        **kw,
    )


def constant_solution_problem(
    grid: GridManifold, k: int = 1, t: float = 0.0, phi_value: float = 1.0, **kw
):
    """Hyperbolic-slab problem whose continuum solution is a constant.

    A^t is a constant negative multiple of g on the slab, so with constant
    phi the interior equation is solved by a constant exponent, and psi is
    chosen as the transported mean curvature.  Returns (spec, truth).
    """
    bg = hyperbolic_slab(grid.n)
    g = bg.metric(grid)
    cone = symfunc.ConePair(k=k, n=grid.n)
    n = grid.n
    neg_a = ((n - 1.0) - 0.5 * t * n) / (n - 2.0)  # -lambda(A^t) entrywise
    f_const = neg_a * cone.f_at_ones
    vstar = 0.5 * np.log(f_const / phi_value)
    psi_pair = tuple(
        BoundaryField(
            np.exp(-vstar) * bg.mean_curvature_exact(grid, sheet), sheet
        )
        for sheet in (0, 1)
    )
    spec = _spec(grid, g, k, t, np.full(grid.shape, phi_value), psi_pair, **kw)
    return spec, np.full(grid.shape, vstar)


def neumann_problem(grid: GridManifold, k: int = 1, t: float = 0.0, **kw):
    """Hyperbolic slab with phi = 1 and psi = 0.

    psi <= 0 puts it squarely inside the uniqueness hypotheses; the solution
    is non-constant because the boundary condition v_nu = -h_g drives it.
    """
    bg = hyperbolic_slab(grid.n)
    g = bg.metric(grid)
    psi_pair = tuple(
        BoundaryField(np.zeros(grid.shape[:-1]), sheet) for sheet in (0, 1)
    )
    spec = _spec(grid, g, k, t, np.ones(grid.shape), psi_pair, **kw)
    return spec, None


def manufactured_problem(
    grid: GridManifold,
    vstar: SmoothScalar,
    k: int = 1,
    t: float = 0.0,
    background: Background | None = None,
    **kw,
):
    """Problem with data induced by a prescribed smooth exponent.

    phi and psi are computed by the direct-curvature oracle: build e^{2 v*} g
    as a metric field, run the full curvature pipeline on it, and read off
    f(-lambda) and the boundary mean curvature.  The recovered solution then
    differs from v* by the O(h^2) consistency gap between the transport and
    direct-curvature discretizations, which is exactly what refinement
    studies measure.  Returns (spec, v* samples).
    """
    bg = background or hyperbolic_slab(grid.n)
    g = bg.metric(grid)
    vs = vstar(grid.coords())
    g_new = conformal_metric(g, vs)
    cone = symfunc.ConePair(k=k, n=grid.n)
    bundle = curvature_bundle(g_new, grid, t)
    neg_lam = -rel_eigenvalues(bundle.schouten, g_new)
    inside, margin = symfunc.cone_contains(neg_lam, cone)
    if not np.all(inside):
        raise ValueError(
            f"prescribed exponent leaves the admissible cone "
            f"(worst margin {float(np.min(margin)):.3e}); reduce its amplitude"
        )
    phi = symfunc.f_eval(neg_lam, cone)
    psi_pair = boundary_mean_curvature(g_new, grid)
    spec = _spec(grid, g, k, t, phi, psi_pair, **kw)

    def family(level: int):
        return manufactured_problem(
            grid.refine(2**level) if level else grid,
            vstar,
            k=k,
            t=t,
            background=bg,
            **kw,
        )

    spec.family = family
    return spec, vs

