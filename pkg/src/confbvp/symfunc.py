"""Elementary symmetric functions and cone calculus.

The curvature operator is f = sigma_k^(1/k) restricted to the cone
Gamma_k = {lambda : sigma_1(lambda) > 0, ..., sigma_k(lambda) > 0}.
Eigenvalue vectors are plain ndarrays of shape (..., n); all operations
broadcast over leading axes. n >= 3 throughout.

f is concave, symmetric, homogeneous of degree one, vanishes on the cone
boundary, has strictly positive partial derivatives inside the cone, and
satisfies the trace pinching f <= sigma_1 / eps_bar together with
sum_i df/dlambda_i >= eps_bar on the unit level set.  ``check_hypotheses``
certifies the best eps_bar on a random sample rather than assuming one.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from math import comb

import numpy as np

from .errors import ConeViolationError

# f_eval refuses vectors this close to the cone boundary (see module tests:
# boundary behaviour is probed by ray limits only, never by evaluation at it).
BOUNDARY_MARGIN = 1e-12

# Below this relative margin the derivatives are returned with a warning.
CONDITIONING_MARGIN = 1e-8


@dataclasses.dataclass(frozen=True)
class ConePair:
    """The (sigma_k^(1/k), Gamma_k) operator/cone pair in dimension n.

    epsilon_bar is the pinching constant of the trace hypothesis; it is
    never prescribed analytically, use ``check_hypotheses`` to certify one
    from samples.  sample_budget sizes stochastic checks.
    """

    k: int
    n: int
    epsilon_bar: float | None = None
    sample_budget: int = 200

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"dimension n must be >= 3, got {self.n}")
        if not 1 <= self.k <= self.n:
            raise ValueError(f"order k must satisfy 1 <= k <= n, got k={self.k}")

    @property
    def f_at_ones(self) -> float:
        """f(1,...,1) = C(n,k)^(1/k); the constant of the homotopy cap."""
        return comb(self.n, self.k) ** (1.0 / self.k)


# Registry for alternative (f, Gamma) pairs.  The solver only depends on the
# functions below, so a drop-in family needs the same four entry points.
_FAMILIES: dict[str, type] = {"sigma": ConePair}


def register_family(name: str, cls: type) -> None:
    _FAMILIES[name] = cls


def make_pair(k: int, n: int, family: str = "sigma", **kw) -> ConePair:
    return _FAMILIES[family](k=k, n=n, **kw)


def elementary_symmetric_all(lam: np.ndarray) -> np.ndarray:
    """All sigma_0..sigma_n of the last axis, returned stacked on a new last axis.

    Uses the stable one-pass recurrence (coefficients of prod (x + lam_i)).
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    for i in range(n):
        li = lam[..., i, None]
        e[..., 1 : i + 2] = e[..., 1 : i + 2] + li * e[..., 0 : i + 1]
    return e


def sigma_k(lam: np.ndarray, k: int) -> np.ndarray | float:
    """k-th elementary symmetric polynomial; sum of k-fold products."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for n={n}")
    out = elementary_symmetric_all(lam)[..., k]
    return float(out) if out.ndim == 0 else out


def cone_contains(lam: np.ndarray, cone: ConePair):
    """Membership in Gamma_k plus the signed margin min_{j<=k} sigma_j.

    Returns (inside, margin); scalars for a single vector, arrays otherwise.
    """
    lam = np.asarray(lam, dtype=float)
    e = elementary_symmetric_all(lam)
    margin = e[..., 1 : cone.k + 1].min(axis=-1)
    inside = margin > 0
    if margin.ndim == 0:
        return bool(inside), float(margin)
    return inside, margin


def _relative_margin(lam: np.ndarray, cone: ConePair) -> np.ndarray:
    """Scale-invariant margin: min_j sigma_j / |lam|^j (degree-normalized)."""
    e = elementary_symmetric_all(lam)
    scale = np.maximum(np.max(np.abs(lam), axis=-1), 1e-300)
    degs = np.arange(1, cone.k + 1)
    return (e[..., 1 : cone.k + 1] / scale[..., None] ** degs).min(axis=-1)


def f_eval(lam: np.ndarray, cone: ConePair) -> np.ndarray | float:
    """sigma_k^(1/k), homogeneous of degree one on Gamma_k.

    Raises ConeViolationError when any input sits within BOUNDARY_MARGIN of
    the cone boundary, in the scale-invariant sense (no continuous extension
    is attempted).
    """
    lam = np.asarray(lam, dtype=float)
    rel = _relative_margin(lam, cone)
    worst = rel.min()
    if worst <= BOUNDARY_MARGIN:
        bad = np.argwhere(np.atleast_1d(rel) <= BOUNDARY_MARGIN)
        raise ConeViolationError(
            f"{bad.shape[0]} vector(s) outside Gamma_{cone.k} "
            f"(worst relative margin {worst:.3e})",
            margin=float(worst),
            nodes=[tuple(b) for b in bad[:16]],
        )
    out = elementary_symmetric_all(lam)[..., cone.k] ** (1.0 / cone.k)
    return float(out) if out.ndim == 0 else out


def f_eval_unsafe(lam: np.ndarray, cone: ConePair) -> np.ndarray:
    """Surrogate sign(sigma_k)|sigma_k|^(1/k), defined everywhere.

    Only meaningful together with the margin from cone_contains: solver line
    searches probe infeasible states and need a finite diagnostic value.
    """
    sk = elementary_symmetric_all(np.asarray(lam, dtype=float))[..., cone.k]
    return np.sign(sk) * np.abs(sk) ** (1.0 / cone.k)


def _deflated_sigma(lam: np.ndarray, drop: tuple[int, ...], order: int) -> np.ndarray:
    """sigma_order of the entries of lam excluding the listed indices."""
    n = lam.shape[-1]
    keep = [i for i in range(n) if i not in drop]
    if order == 0:
        return np.ones(lam.shape[:-1])
    if order > len(keep):
        return np.zeros(lam.shape[:-1])
    return elementary_symmetric_all(lam[..., keep])[..., order]


def sigma_k_grad(lam: np.ndarray, k: int) -> np.ndarray:
    """Gradient of sigma_k: entry i is sigma_{k-1} of the other entries."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    g = np.empty_like(lam)
    for i in range(n):
        g[..., i] = _deflated_sigma(lam, (i,), k - 1)
    return g


def sigma_k_hess(lam: np.ndarray, k: int) -> np.ndarray:
    """Hessian of sigma_k: (i,j) entry is sigma_{k-2} without i,j; diagonal 0."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    H = np.zeros(lam.shape[:-1] + (n, n))
    if k < 2:
        return H
    for i in range(n):
        for j in range(i + 1, n):
            v = _deflated_sigma(lam, (i, j), k - 2)
            H[..., i, j] = v
            H[..., j, i] = v
    return H


def f_grad(lam: np.ndarray, cone: ConePair) -> np.ndarray:
    """Gradient of sigma_k^(1/k); requires strict cone membership.

    This is the hot path of the solver linearization, so no Hessian is
    assembled here.
    """
    lam = np.asarray(lam, dtype=float)
    k = cone.k
    sk = elementary_symmetric_all(lam)[..., k]
    gs = sigma_k_grad(lam, k)
    if k == 1:
        return gs
    return (1.0 / k) * sk[..., None] ** (1.0 / k - 1.0) * gs


def f_grad_hess(lam: np.ndarray, cone: ConePair):
    """Analytic gradient and Hessian of f = sigma_k^(1/k) at interior points.

    Gradient entries are strictly positive inside Gamma_k and the Hessian is
    negative semidefinite (concavity).  Near-boundary inputs trigger a
    conditioning warning but are still evaluated.
    """
    lam = np.asarray(lam, dtype=float)
    worst = float(np.min(_relative_margin(lam, cone)))
    if worst <= BOUNDARY_MARGIN:
        raise ConeViolationError(
            f"f_grad_hess requires strict interior of Gamma_{cone.k} "
            f"(worst relative margin {worst:.3e})",
            margin=worst,
        )
    if worst < CONDITIONING_MARGIN:
        warnings.warn(
            f"cone margin {worst:.3e} close to the boundary; "
            "derivatives of f are ill conditioned there",
            RuntimeWarning,
            stacklevel=2,
        )
    k = cone.k
    sk = elementary_symmetric_all(lam)[..., k]
    gs = sigma_k_grad(lam, k)
    if k == 1:
        return gs, np.zeros(lam.shape[:-1] + (lam.shape[-1],) * 2)
    a = 1.0 / k
    grad = a * sk[..., None] ** (a - 1.0) * gs
    hess = a * sk[..., None, None] ** (a - 1.0) * sigma_k_hess(lam, k)
    hess = hess + a * (a - 1.0) * sk[..., None, None] ** (a - 2.0) * (
        gs[..., :, None] * gs[..., None, :]
    )
    return grad, hess


def sample_cone(cone: ConePair, count: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample Gamma_k points from the box [-1, 2]^n."""
    out = np.empty((count, cone.n))
    got = 0
    while got < count:
        cand = rng.uniform(-1.0, 2.0, size=(4 * (count - got) + 16, cone.n))
        _, margin = cone_contains(cand, cone)
        good = cand[margin > BOUNDARY_MARGIN]
        take = min(len(good), count - got)
        out[got : got + take] = good[:take]
        got += take
    return out


@dataclasses.dataclass
class HypothesisReport:
    """Worst-case violations of the operator hypotheses over a sample set."""

    k: int
    n: int
    samples: int
    seed: int
    homogeneity_residual: float
    concavity_violation: float  # max Hessian eigenvalue, relative to ||H||
    min_gradient_entry: float
    certified_epsilon_bar: float
    boundary_ray_limit: float  # f along a ray shrinking to the cone boundary
    violations: int

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def check_hypotheses(cone: ConePair, samples: int | None = None,
                     seed: int = 0) -> HypothesisReport:
    """Stochastic certification of the operator hypotheses on Gamma_k.

    Checks degree-one homogeneity, concavity, monotonicity, and the trace
    pinching on normalized samples; returns the largest pinching constant
    certified by the sample set.  Report-only: never raises.
    """
    if samples is None:
        samples = cone.sample_budget
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    lam = sample_cone(cone, samples, rng)
    f = f_eval(lam, cone)

    hom = 0.0
    for s in (1e-6, 1.0, 1e6):
        fs = f_eval(s * lam, cone)
        hom = max(hom, float(np.max(np.abs(fs - s * f) / (s * np.abs(f)))))

    grad, hess = f_grad_hess(lam, cone)
    hnorm = np.linalg.norm(hess, axis=(-2, -1))
    heig = np.linalg.eigvalsh(hess)[..., -1]
    conc = float(np.max(heig / np.where(hnorm > 0, hnorm, 1.0)))
    min_grad = float(np.min(grad))

    # Trace pinching on the f = 1 level set: certified eps_bar is the largest
    # constant no sample contradicts.
    unit = lam / f[:, None]
    s1 = sigma_k(unit, 1)
    gsum = f_grad(unit, cone).sum(axis=-1)
    eps_bar = float(min(np.min(s1), np.min(gsum)))

    # Continuity toward the cone boundary, probed along rays to a boundary
    # point (last coordinate pushed until sigma_k -> 0).
    lam0 = np.full(cone.n, 1.0)
    b = _boundary_point(cone, lam0)
    ray = lam0[None, :] + (1.0 - np.logspace(0, -9, 64))[:, None] * (b - lam0)[None, :]
    fray = f_eval(ray, cone)
    boundary_limit = float(fray[-1])  # ~ (1e-9)^(1/k) by the k-th root

    violations = int(hom > 1e-10) + int(conc > 1e-8) + int(min_grad <= 0)
    return HypothesisReport(
        k=cone.k,
        n=cone.n,
        samples=samples,
        seed=seed,
        homogeneity_residual=hom,
        concavity_violation=conc,
        min_gradient_entry=min_grad,
        certified_epsilon_bar=eps_bar,
        boundary_ray_limit=boundary_limit,
        violations=violations,
    )


def _boundary_point(cone: ConePair, lam: np.ndarray) -> np.ndarray:
    """A point on the boundary of Gamma_k obtained by lowering one entry."""
    lo, hi = -4.0 * cone.n, float(lam[-1])
    b = lam.copy()
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        b[-1] = mid
        inside, _ = cone_contains(b, cone)
        if inside:
            hi = mid
        else:
            lo = mid
    b[-1] = hi
    return b
