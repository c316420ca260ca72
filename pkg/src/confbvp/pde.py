"""Solver: homotopy residual, linearization, guarded Newton, continuation.

The continuation family at parameter s blends the fully nonlinear operator
with its quasilinear trace cap,

    f(lambda_g(s Wbar + (1-s) tr_g(Wbar) g)) - (s phi + 1 - s) e^{2v} = 0,
    v_nu + h - s e^v psi = 0,         Wbar = W(v) - A,

so s=0 is a solvable quasilinear problem and s=1 is the governing equation
(the s=1 residual is regression-locked against the conformal residual).  The
argument of f must stay in the cone; the Newton line search halves its step
until the margin stays positive and the residual decreases.

Unknowns live at every grid node: interior nodes carry the interior equation,
sheet nodes carry the boundary equation, giving a square sparse system.  The
Jacobian is the exact derivative of the discrete residual (chain rule through
the generalized eigenproblem), which finite differences confirm to 1e-5.
"""

from __future__ import annotations

import dataclasses
import json
import warnings

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import conformal, symfunc
from .errors import (
    ConeViolationError,
    ContinuationError,
    NewtonError,
    ParameterError,
    SpecError,
)
from .geometry import (
    BoundaryField,
    GridManifold,
    MetricField,
    boundary_mean_curvature,
    curvature_bundle,
    diff1_matrix,
    diff2_matrix,
    outward_normal,
    rel_eigensystem,
    rel_eigenvalues,
)

DEFAULT_SCHEDULE = tuple(np.round(np.linspace(0.0, 1.0, 11), 12))

EIGEN_GAP_TOL = 1e-12


class Workspace:
    """Background discretization cache shared by all residual/Jacobian calls.

    Everything here depends only on (grid, g, t), never on the unknown v, so
    a spec builds it once: curvature, sheet normals, sparse derivative
    operators and the node bookkeeping of the square Newton system.
    """

    def __init__(self, spec: "ProblemSpec"):
        grid, g = spec.grid, spec.g
        self.grid, self.g, self.cone, self.t = grid, g, spec.cone, spec.t
        self.phi = np.asarray(spec.phi, dtype=float)
        self.psi_pair = spec.psi
        bundle = curvature_bundle(g, grid, spec.t)
        self.gamma = bundle.christoffel
        self.schouten = bundle.schouten
        self.scalar = bundle.scalar
        self.ginv = g.inverse()
        self.h_pair = boundary_mean_curvature(g, grid, self.gamma)

        n = grid.n
        self.d1 = [diff1_matrix(grid, a) for a in range(n)]
        # mixed operators follow diff_mixed's composition order (normal first)
        self.d2 = {}
        for a in range(n):
            for b in range(a, n):
                if a == b:
                    self.d2[(a, a)] = diff2_matrix(grid, a)
                else:
                    self.d2[(a, b)] = self.d1[a] @ self.d1[b]

        idx = np.arange(grid.num_nodes).reshape(grid.shape)
        self.sheet_nodes = (idx[grid.sheet_index(0)].ravel(),
                            idx[grid.sheet_index(1)].ravel())
        bmask = np.zeros(grid.num_nodes, dtype=bool)
        bmask[self.sheet_nodes[0]] = True
        bmask[self.sheet_nodes[1]] = True
        self.boundary_mask = bmask
        self.interior_mask = ~bmask

        # boundary row operator: nu^i d_i on sheet rows, zero elsewhere
        self.nu = tuple(outward_normal(g, grid, s) for s in (0, 1))
        rows = None
        for sheet in (0, 1):
            for i in range(n):
                c = np.zeros(grid.num_nodes)
                c[self.sheet_nodes[sheet]] = self.nu[sheet][..., i].ravel()
                term = sp.diags(c) @ self.d1[i]
                rows = term if rows is None else rows + term
        self.normal_rows = rows.tocsr()

    def flat(self, field: np.ndarray) -> np.ndarray:
        return np.asarray(field).reshape(self.grid.num_nodes, -1).squeeze(-1)


@dataclasses.dataclass
class ProblemSpec:
    """Problem data plus discretization and tolerance policy.

    phi is the positive interior datum, psi the boundary pair.  The homotopy
    schedule lists the continuation targets in [0, 1]; adaptive bisection
    refines between them on Newton failure.
    """

    grid: GridManifold
    g: MetricField
    cone: symfunc.ConePair
    t: float
    phi: np.ndarray
    psi: tuple[BoundaryField, BoundaryField]
    tol_newton: float = 1e-10
    tol_path: float = 1e-9
    max_newton: int = 30
    homotopy_schedule: tuple = DEFAULT_SCHEDULE
    family: object | None = None  # optional level -> (spec, truth) refiner

    def __post_init__(self):
        if self.t >= 1.0:
            raise ParameterError(f"t must satisfy t < 1, got {self.t}")
        self.phi = np.asarray(self.phi, dtype=float)
        self._ws = None

    def workspace(self) -> Workspace:
        if self._ws is None:
            self._ws = Workspace(self)
        return self._ws

    def validate(self) -> None:
        """Check solvability hypotheses; raise SpecError on hard violations.

        Sign conditions the theory wants but the solver tolerates (psi or h
        positive somewhere) only warn: uniqueness/estimates may degrade, and
        several stress tests run exactly such data on purpose.
        """
        if np.min(self.phi) <= 0.0:
            raise SpecError("phi must be strictly positive")
        ws = self.workspace()
        neg_lam = -rel_eigenvalues(ws.schouten, ws.g)
        inside, margin = symfunc.cone_contains(neg_lam, ws.cone)
        if not np.all(inside):
            raise SpecError(
                "background is not admissible: -lambda(A^t) leaves the cone "
                f"(worst margin {float(np.min(margin)):.3e})"
            )
        for bf, psi in zip(ws.h_pair, self.psi):
            if np.max(psi.values) > 1e-12:
                warnings.warn(
                    f"psi > 0 on sheet {psi.sheet}: outside the uniqueness "
                    "hypotheses, proceeding anyway",
                    RuntimeWarning,
                    stacklevel=2,
                )
            if np.max(bf.values) > 1e-12:
                warnings.warn(
                    f"h_g > 0 on sheet {bf.sheet}: run the zero-mean-curvature "
                    "gauge first for theorem-grade hypotheses",
                    RuntimeWarning,
                    stacklevel=2,
                )


@dataclasses.dataclass
class HomotopyState:
    """One accepted continuation state (diagnostics plus the field)."""

    s: float
    v: np.ndarray
    newton_iters: int
    residual_norm: float
    min_cone_margin: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "s": self.s,
                "newton_iters": self.newton_iters,
                "residual_norm": self.residual_norm,
                "min_cone_margin": self.min_cone_margin,
            },
            sort_keys=True,
        )


@dataclasses.dataclass
class LinearizedOperator:
    """Assembled sparse linearization at (v, s).

    second_order / first_order / zeroth_order are the interior coefficient
    fields; boundary rows implement nu^i d_i - s psi e^v on the sheets.
    """

    matrix: sp.csr_matrix
    second_order: np.ndarray
    first_order: np.ndarray
    zeroth_order: np.ndarray
    s: float

    def matvec(self, w: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(w).ravel()


def _homotopy_parts(v: np.ndarray, s: float, ws: Workspace, h_scale: float = 1.0):
    """Shared residual assembly: tensor argument, eigenvalues, margins.

    h_scale multiplies the boundary mean-curvature datum; the start-system
    driver ramps it toward 1 when the full Robin data is too nonlinear for a
    cold Newton start (the Jacobian is unaffected, h enters affinely).
    """
    W = conformal.deformation_tensor(v, ws.g, ws.grid, ws.t, ws.gamma)
    Wbar = W - ws.schouten
    trW = np.einsum("...ij,...ij->...", ws.ginv, Wbar)
    T = s * Wbar + ((1.0 - s) * trW)[..., None, None] * ws.g.mat
    lam = rel_eigenvalues(T, ws.g)
    _, margin = symfunc.cone_contains(lam, ws.cone)
    interior = symfunc.f_eval_unsafe(lam, ws.cone) - (
        s * ws.phi + (1.0 - s)
    ) * np.exp(2.0 * v)
    boundary = []
    for bf, psi in zip(ws.h_pair, ws.psi_pair):
        vn = (ws.normal_rows @ v.ravel())[ws.sheet_nodes[bf.sheet]]
        vs = v[ws.grid.sheet_index(bf.sheet)].ravel()
        boundary.append(
            vn + h_scale * bf.values.ravel() - s * np.exp(vs) * psi.values.ravel()
        )
    return T, interior, boundary, margin


def homotopy_residual(v: np.ndarray, s: float, spec: ProblemSpec):
    """Interior and boundary residual fields of the s-equation.

    Raises ConeViolationError (with offending node list) if the tensor
    argument leaves the cone anywhere; use the Newton driver for guarded
    evaluation.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    ws = spec.workspace()
    _, interior, boundary, margin = _homotopy_parts(v, s, ws)
    if np.min(margin) <= 0.0:
        bad = np.argwhere(margin <= 0.0)
        raise ConeViolationError(
            f"cone violated at {bad.shape[0]} node(s) for s={s}",
            margin=float(np.min(margin)),
            nodes=[tuple(b) for b in bad[:16]],
        )
    bpair = tuple(
        BoundaryField(b.reshape(spec.grid.shape[:-1]), sheet)
        for sheet, b in enumerate(boundary)
    )
    return interior, bpair


def _residual_vector(v, s, ws, h_scale: float = 1.0):
    """Square-system residual, margin field, and its sup norm."""
    _, interior, boundary, margin = _homotopy_parts(v, s, ws, h_scale)
    R = ws.flat(interior).copy()
    R[ws.sheet_nodes[0]] = boundary[0]
    R[ws.sheet_nodes[1]] = boundary[1]
    return R, margin, float(np.max(np.abs(R)))


def linearize(v: np.ndarray, s: float, spec: ProblemSpec) -> LinearizedOperator:
    """Exact Jacobian of the discrete residual at (v, s).

    The spectral chain rule F^{ij} = sum_a f'(lam_a) u_a^i u_a^j (with
    g-orthonormal eigenvectors u) is the symmetric divided-difference limit
    and stays valid at coalescing eigenvalues because f is symmetric; a
    warning is emitted when eigenvalue gaps shrink below the tolerance since
    the eigenbasis itself is then arbitrary.
    """
    ws = spec.workspace()
    grid, n = ws.grid, ws.grid.n
    T, _, _, margin = _homotopy_parts(v, s, ws)
    if np.min(margin) <= 0.0:
        raise ConeViolationError(
            "cannot linearize outside the cone",
            margin=float(np.min(margin)),
        )
    lam, U = rel_eigensystem(T, ws.g)
    gaps = np.diff(lam, axis=-1)
    if gaps.size and float(np.min(np.abs(gaps))) < EIGEN_GAP_TOL:
        warnings.warn(
            "near-coincident eigenvalues in the linearization; using the "
            "projector (divided-difference) form of the spectral derivative",
            RuntimeWarning,
            stacklevel=2,
        )
    fgrad = symfunc.f_grad(lam, ws.cone)
    F = np.einsum("...ia,...a,...ja->...ij", U, fgrad, U)

    Fg = np.einsum("...ij,...ij->...", F, ws.g.mat)
    G = s * F + ((1.0 - s) * Fg)[..., None, None] * ws.ginv
    Gg = np.einsum("...ij,...ij->...", G, ws.g.mat)
    H = G + ((1.0 - ws.t) / (n - 2.0)) * Gg[..., None, None] * ws.ginv

    dv = np.stack(
        [(ws.d1[a] @ v.ravel()).reshape(grid.shape) for a in range(n)], axis=-1
    )
    bfield = (
        -np.einsum("...kl,...mkl->...m", H, ws.gamma)
        + (2.0 - ws.t) * Gg[..., None] * np.einsum("...mq,...q->...m", ws.ginv, dv)
        - 2.0 * np.einsum("...mk,...k->...m", G, dv)
    )
    c0 = -2.0 * (s * ws.phi + (1.0 - s)) * np.exp(2.0 * v)

    Nn = grid.num_nodes
    interior = sp.diags(ws.interior_mask.astype(float))
    J = sp.csr_matrix((Nn, Nn))
    for a in range(n):
        for b in range(a, n):
            coef = H[..., a, b] * (1.0 if a == b else 2.0)
            J = J + sp.diags(coef.ravel()) @ ws.d2[(a, b)]
    for m in range(n):
        J = J + sp.diags(bfield[..., m].ravel()) @ ws.d1[m]
    J = interior @ (J + sp.diags(c0.ravel()))

    # boundary rows: w_nu - s psi e^v w
    robin = np.zeros(Nn)
    for sheet in (0, 1):
        vs = v[grid.sheet_index(sheet)].ravel()
        robin[ws.sheet_nodes[sheet]] = -s * ws.psi_pair[sheet].values.ravel() * np.exp(vs)
    J = J + ws.normal_rows + sp.diags(robin)
    return LinearizedOperator(J.tocsr(), H, bfield, c0, s)


def newton_solve(
    spec: ProblemSpec,
    s: float,
    v0: np.ndarray | None = None,
    h_scale: float = 1.0,
) -> HomotopyState:
    """Damped cone-guarded Newton for the s-equation.

    The step is halved until the cone margin stays positive and the l2 merit
    satisfies the Armijo decrease (factor 1e-4 per unit step); convergence is
    declared on the sup norm.  With v=0 always feasible on admissible
    backgrounds, an infeasible start is pre-damped toward zero.
    """
    ws = spec.workspace()
    v = np.zeros(spec.grid.shape) if v0 is None else np.array(v0, dtype=float)

    for _ in range(60):
        _, margin, _ = _residual_vector(v, s, ws, h_scale)
        if np.min(margin) > 0.0:
            break
        v *= 0.5
    else:
        raise NewtonError(f"no feasible start found for s={s}")

    R, margin, norm = _residual_vector(v, s, ws, h_scale)
    merit = float(np.linalg.norm(R))
    best = HomotopyState(s, v.copy(), 0, norm, float(np.min(margin)))
    norms = [norm]
    for it in range(1, spec.max_newton + 1):
        if norm <= spec.tol_newton:
            return HomotopyState(s, v, it - 1, norm, float(np.min(margin)))
        op = linearize(v, s, spec)
        delta = spsolve(op.matrix, -R).reshape(spec.grid.shape)
        if not np.all(np.isfinite(delta)):
            raise NewtonError(f"singular linearization at s={s}", state=best)
        alpha = 1.0
        while True:
            vt = v + alpha * delta
            Rt, mt, nt = _residual_vector(vt, s, ws, h_scale)
            mt_min = float(np.min(mt))
            merit_t = float(np.linalg.norm(Rt))
            if mt_min > 0.0 and merit_t <= (1.0 - 1e-4 * alpha) * merit:
                break
            alpha *= 0.5
            if alpha < 1e-10:
                raise NewtonError(
                    f"line search stalled at s={s} (residual {norm:.3e})",
                    state=best,
                )
        v, R, margin, norm, merit = vt, Rt, mt, nt, merit_t
        norms.append(norm)
        if norm < best.residual_norm:
            best = HomotopyState(s, v.copy(), it, norm, float(np.min(margin)))
    if norm <= spec.tol_newton:
        return HomotopyState(s, v, spec.max_newton, norm, float(np.min(margin)))
    raise NewtonError(
        f"Newton did not converge in {spec.max_newton} iterations at s={s} "
        f"(residual trail {['%.2e' % x for x in norms[-4:]]})",
        state=best,
    )


def _solve_start(spec: ProblemSpec, v: np.ndarray) -> HomotopyState:
    """Solve the s=0 start system, ramping the boundary datum if needed.

    The quasilinear start problem is solvable but can be too nonlinear for a
    cold Newton start when |h_g| is order one (the Robin data drives steep
    boundary layers); a short warm-started ramp of h from quarter strength to
    full strength fixes that, with a pseudo-transient sweep as last resort.
    """
    try:
        return newton_solve(spec, 0.0, v)
    except NewtonError:
        pass
    for tau in (0.25, 0.5, 0.75, 1.0):
        try:
            state = newton_solve(spec, 0.0, v, h_scale=tau)
            v = state.v
        except NewtonError as err:
            v = _pseudo_transient(spec, 0.0, v, h_scale=tau)
            state = newton_solve(spec, 0.0, v, h_scale=tau)
            v = state.v
    return state


def _pseudo_transient(
    spec: ProblemSpec, s: float, v: np.ndarray, h_scale: float = 1.0
) -> np.ndarray:
    """Graded ramp fallback: solve (J - I/dtau) dv = -R with growing dtau.

    The interior linearization is negative-elliptic, so shifting by -I/dtau
    damps toward the stable manifold of dv/dtau = R(v).
    """
    ws = spec.workspace()
    dtau = 1e-2
    R, margin, norm = _residual_vector(v, s, ws, h_scale)
    for _ in range(200):
        if norm <= 1e-3:
            return v
        op = linearize(v, s, spec)
        eye = sp.identity(spec.grid.num_nodes) / dtau
        delta = spsolve(op.matrix - eye, -R).reshape(spec.grid.shape)
        vt = v + delta
        Rt, mt, nt = _residual_vector(vt, s, ws, h_scale)
        if np.min(mt) > 0.0 and nt < norm:
            v, R, norm = vt, Rt, nt
            dtau *= 2.0
        else:
            dtau *= 0.25
            if dtau < 1e-8:
                break
    return v


def continue_homotopy(spec: ProblemSpec, v_init: np.ndarray | None = None):
    """March the continuation schedule from s=0 to s=1.

    Every accepted state has positive cone margin and residual below the path
    tolerance; Newton failure bisects the schedule down to steps of 1e-3
    before giving up with the trace preserved.
    """
    schedule = [float(x) for x in spec.homotopy_schedule]
    if not schedule or abs(schedule[0]) > 1e-12 or abs(schedule[-1] - 1.0) > 1e-12:
        raise SpecError("homotopy schedule must run from 0 to 1")
    v = np.zeros(spec.grid.shape) if v_init is None else np.array(v_init, dtype=float)
    trace: list[HomotopyState] = []

    state = _solve_start(spec, v)
    trace.append(state)
    v = state.v

    targets = schedule[1:]
    s_prev = 0.0
    while targets:
        s_next = targets[0]
        try:
            state = newton_solve(spec, s_next, v)
        except NewtonError as err:
            if s_next - s_prev <= 1e-3:
                raise ContinuationError(
                    f"continuation stalled between s={s_prev} and s={s_next}: {err}",
                    trace=trace,
                ) from err
            targets.insert(0, 0.5 * (s_prev + s_next))
            continue
        if state.residual_norm > spec.tol_path:
            raise ContinuationError(
                f"accepted state at s={s_next} above path tolerance "
                f"({state.residual_norm:.3e})",
                trace=trace,
            )
        trace.append(state)
        v = state.v
        s_prev = s_next
        targets.pop(0)
    return v, trace
