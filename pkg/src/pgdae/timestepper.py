"""Petrov-Galerkin time stepping with a per-step discrete energy balance.

On every interval ``[t_{j-1}, t_j]`` the states are polynomials of degree
``k`` in the orthonormal Legendre basis: ``z1`` and ``z2`` are continuous
across intervals (their left endpoint value is eliminated by substitution),
``z3`` is free to jump.  Testing blocks 1 and 2 against the degree-(k-1)
basis and block 3 against the degree-k basis yields, per interval, a square
nonlinear system for the free coefficients:

* block 1 rows:  n_pi-point Gauss quadrature of  <grad_1 H(z1, z2), psi_q>
  minus the n_q-point quadrature Q_j of the right-hand side row;
* block 2 rows:  the exact integral  int <dz2/dt, psi_q>  (computed with a
  (k+1)-point Gauss rule, which is exact for the degree 2k-2 integrand)
  minus the Q_j row;
* block 3 rows:  Q_j quadrature of the right-hand side row only.

The right-hand side argument at a quadrature node ``s`` is
``zeta(s) = (dz1/dt(s), (Pi grad_2 H)(s), z3(s))`` where ``Pi`` is the
L2 projection onto degree k-1, realized with the same n_pi-node rule.
Because the projection and the block-1 quadrature integrate polynomial
Hamiltonian gradients exactly (n_pi = 2k suffices up to quartic
Hamiltonians), each converged step satisfies

    H(z(t_j)) - H(z(t_{j-1})) = Q_j( -<R(zeta), zeta> + <B u + g, zeta> )

to roundoff, which the solver records step by step in an energy audit.

Each step is solved with Newton's method: the Jacobian is assembled
analytically when the model carries a Hamiltonian Hessian and linear
operator matrices, otherwise by forward finite differences on the
residual.  The default of ten Newton iterations (no line search) is enough
for every shipped model; an optional residual tolerance gives early exit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DimensionMismatchError,
    LinearSolveFailedError,
    NewtonDivergedError,
    OutOfRangeError,
)
from .model import EnergyModel
from .polybasis import LegendreBasis, PolySegment, gauss_rule

# Models at most this large use the dense Jacobian path; larger analytic
# models assemble sparse Jacobians and solve with SuperLU.
DENSE_LIMIT = 64

FD_STEP = 1e-7


@dataclass(frozen=True)
class SchemeParams:
    """Discretization parameters for the time stepper.

    ``n_q`` is the node count of the right-hand-side quadrature (default
    ``k + 1``); ``n_pi`` the node count used for the projection and the
    block-1 integrals (default ``2 k``, exact for Hamiltonians up to
    quartic).  ``newton_iters`` Newton steps are always performed unless
    the residual norm drops below ``newton_tol`` first.
    """

    k: int
    n_q: int | None = None
    n_pi: int | None = None
    newton_iters: int = 10
    newton_tol: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise OutOfRangeError(f"polynomial degree must be >= 1, got {self.k}")
        if self.n_q is not None and self.n_q < 1:
            raise OutOfRangeError("n_q must be >= 1")
        if self.n_pi is not None and self.n_pi < 1:
            raise OutOfRangeError("n_pi must be >= 1")
        if self.newton_iters < 1:
            raise OutOfRangeError("newton_iters must be >= 1")

    @property
    def quad_nodes(self) -> int:
        return self.k + 1 if self.n_q is None else self.n_q

    @property
    def proj_nodes(self) -> int:
        return 2 * self.k if self.n_pi is None else self.n_pi


@dataclass
class TimeGrid:
    """Strictly increasing time points ``t_0 < ... < t_m``."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 1 or self.points.size < 2:
            raise OutOfRangeError("a time grid needs at least two points")
        if not np.all(np.diff(self.points) > 0):
            raise OutOfRangeError("time points must be strictly increasing")

    @classmethod
    def uniform(cls, T: float, m: int, t0: float = 0.0) -> "TimeGrid":
        if m < 1:
            raise OutOfRangeError("need at least one interval")
        return cls(points=t0 + np.arange(m + 1) * (T / m))

    @property
    def m(self) -> int:
        return self.points.size - 1

    @property
    def tau(self) -> float:
        return float(np.max(np.diff(self.points)))


@dataclass
class NewtonReport:
    iterations: int
    residual_norms: list
    converged: bool
    rank_deficient: bool = False


@dataclass
class EnergyAudit:
    """Per-step energy bookkeeping of a solved trajectory.

    ``lhs[j]`` is the Hamiltonian increment over step ``j + 1`` and
    ``rhs[j]`` the quadrature of ``-<R(zeta), zeta> + <source, zeta>``;
    the two agree to roundoff for converged steps.
    """

    t: np.ndarray
    H: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    dissipation: np.ndarray
    supply: np.ndarray

    @property
    def normalizer(self) -> float:
        return float(np.max(np.abs(self.lhs))) if self.lhs.size else 0.0

    def rel_errors(self) -> np.ndarray:
        """Per-step balance defect relative to the largest energy increment."""
        denom = self.normalizer
        if denom == 0.0:
            raise ZeroDivisionError("all energy increments vanish")
        return np.abs(self.lhs - self.rhs) / denom

    def max_rel_error(self) -> float:
        return float(np.max(self.rel_errors()))


@dataclass
class Trajectory:
    """Piecewise-polynomial solution, one segment triple per interval."""

    grid: TimeGrid
    k: int
    seg1: list
    seg2: list
    seg3: list

    def interval_index(self, t: float) -> int:
        pts = self.grid.points
        if t < pts[0] or t > pts[-1]:
            raise OutOfRangeError(f"time {t} outside [{pts[0]}, {pts[-1]}]")
        # Left-closed only at t0; interior grid points evaluate in the left
        # interval so z3 (which may jump) gets its left limit.
        j = int(np.searchsorted(pts, t, side="left"))
        return max(j, 1) - 1

    def eval(self, t: float):
        j = self.interval_index(t)
        return self.seg1[j].eval(t), self.seg2[j].eval(t), self.seg3[j].eval(t)

    def eval_many(self, ts):
        """Block values on a grid; returns three arrays of shape (len, n_i)."""
        ts = np.asarray(ts, dtype=float)
        out = [np.empty((ts.size, seg[0].dim)) for seg in (self.seg1, self.seg2, self.seg3)]
        idx = np.array([self.interval_index(t) for t in ts])
        for j in np.unique(idx):
            mask = idx == j
            tj = ts[mask]
            out[0][mask] = self.seg1[j].eval_many(tj)
            out[1][mask] = self.seg2[j].eval_many(tj)
            out[2][mask] = self.seg3[j].eval_many(tj)
        return out

    def endpoint_values(self):
        """Block values at every grid point (z3 by its left limit at t > t0)."""
        return self.eval_many(self.grid.points)


def eval_trajectory(traj: Trajectory, t: float):
    """Values ``(z1, z2, z3)`` at time ``t`` (left limits at grid points)."""
    return traj.eval(t)


def _min_norm_step(J: np.ndarray, rhs: np.ndarray):
    delta, _, rank, _ = np.linalg.lstsq(J, rhs, rcond=1e-12)
    if not np.all(np.isfinite(delta)):
        raise LinearSolveFailedError("least-squares Newton step is not finite")
    return delta, rank < J.shape[1]


class _IntervalOps:
    """Precomputed quadrature/basis data for one interval length."""

    def __init__(self, model: EnergyModel, params: SchemeParams, dt: float):
        self._prefer_lstsq = False
        k = params.k
        n_q, n_pi = params.quad_nodes, params.proj_nodes
        self.model, self.params, self.dt = model, params, dt
        self.k, self.n_q, self.n_pi = k, n_q, n_pi
        n1, n2, n3 = model.n1, model.n2, model.n3
        self.sizes = (k * n1, k * n2, (k + 1) * n3)
        self.dim = sum(self.sizes)

        trial = LegendreBasis(k, 0.0, dt)
        test = LegendreBasis(k - 1, 0.0, dt)
        self.trial, self.test = trial, test
        self.D = trial.derivative_matrix()                      # (k, k+1)

        self.x_q, self.w_q = gauss_rule(n_q).scaled(0.0, dt)    # offsets within interval
        x_pi, w_pi = gauss_rule(n_pi).scaled(0.0, dt)
        self.x_pi = x_pi

        self.Phi_pi = trial.value_matrix(x_pi)                  # (n_pi, k+1)
        self.Psi_pi = test.value_matrix(x_pi)                   # (n_pi, k)
        self.PhiQ = trial.value_matrix(self.x_q)                # (n_q, k+1)
        self.PsiQ = test.value_matrix(self.x_q)                 # (n_q, k)

        # Left-endpoint elimination: full coefficients are
        # C = e1 * sqrt(dt) * a + N @ Theta with the free block Theta.
        left = trial.left_values()
        self.e1coef = np.zeros(k + 1)
        self.e1coef[0] = np.sqrt(dt)
        N = np.zeros((k + 1, k))
        N[1:, :] = np.eye(k)
        N[0, :] = -np.sqrt(dt) * left[1:]
        self.N = N

        self.P1 = self.Psi_pi.T * w_pi                          # (k, n_pi)
        self.PQ1 = self.PsiQ.T * self.w_q                       # (k, n_q)
        self.PQ3 = self.PhiQ.T * self.w_q                       # (k+1, n_q)
        self.PiQpi = self.PsiQ @ self.P1                        # (n_q, n_pi)
        self.DQN = self.PsiQ @ (self.D @ N)                     # (n_q, k)
        self.ApiN = self.Phi_pi @ N                             # (n_pi, k)

        # Exact block-2 left-hand side, computed with the (k+1)-node rule.
        xg, wg = gauss_rule(k + 1).scaled(0.0, dt)
        PsiG = test.value_matrix(xg)
        self.LHS2 = (PsiG.T * wg) @ PsiG @ (self.D @ N)         # (k, k)

        self.mode = "fd"
        if model.has_analytic_structure:
            self.mode = "dense" if model.n <= DENSE_LIMIT else "sparse"
            self._build_fixed_jacobian()

    # -- flattening ----------------------------------------------------

    def unpack(self, theta):
        k, (s1, s2, s3) = self.k, self.sizes
        m = self.model
        T1 = theta[:s1].reshape(k, m.n1)
        T2 = theta[s1:s1 + s2].reshape(k, m.n2)
        C3 = theta[s1 + s2:].reshape(k + 1, m.n3)
        return T1, T2, C3

    def embed(self, a, Theta):
        return np.outer(self.e1coef, a) + self.N @ Theta

    # -- residual -------------------------------------------------------

    def residual(self, theta, a1, a2, src_Q):
        """Residual vector; also returns node data reused by the audit."""
        m = self.model
        n1, n2 = m.n1, m.n2
        T1, T2, C3 = self.unpack(theta)
        C1, C2 = self.embed(a1, T1), self.embed(a2, T2)

        Z1 = self.Phi_pi @ C1
        Z2 = self.Phi_pi @ C2
        G1 = np.stack([m.grad1(Z1[l], Z2[l]) for l in range(self.n_pi)])
        G2 = np.stack([m.grad2(Z1[l], Z2[l]) for l in range(self.n_pi)])

        gamma = self.P1 @ G2                                   # (k, n2)
        dz1Q = self.DQN @ T1                                   # (n_q, n1)
        pg2Q = self.PsiQ @ gamma                               # (n_q, n2)
        z3Q = self.PhiQ @ C3                                   # (n_q, n3)
        zeta = np.concatenate([dz1Q, pg2Q, z3Q], axis=1)
        Y = np.stack([m.apply_J(zeta[l]) - m.apply_R(zeta[l]) for l in range(self.n_q)])
        Y = Y + src_Q

        F1 = self.P1 @ G1 - self.PQ1 @ Y[:, :n1]
        F2 = self.LHS2 @ T2 - self.PQ1 @ Y[:, n1:n1 + n2]
        F3 = -self.PQ3 @ Y[:, n1 + n2:]
        F = np.concatenate([F1.ravel(), F2.ravel(), F3.ravel()])
        cache = {"C1": C1, "C2": C2, "C3": C3, "Z1": Z1, "Z2": Z2, "zeta": zeta}
        return F, cache

    # -- analytic Jacobian ----------------------------------------------

    def _kron(self, S, H):
        if self.mode == "sparse":
            return sp.kron(sp.csr_matrix(S), H, format="coo")
        return np.kron(S, H if isinstance(H, np.ndarray) else H.toarray())

    def _accumulate(self, blocks):
        """Sum of (row_offset, col_offset, block) into a full-size matrix."""
        if self.mode == "sparse":
            rows, cols, vals = [], [], []
            for r0, c0, B in blocks:
                B = B.tocoo() if sp.issparse(B) else sp.coo_matrix(B)
                rows.append(B.row + r0)
                cols.append(B.col + c0)
                vals.append(B.data)
            if not rows:
                return sp.csr_matrix((self.dim, self.dim))
            return sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(self.dim, self.dim),
            )
        out = np.zeros((self.dim, self.dim))
        for r0, c0, B in blocks:
            B = B.toarray() if sp.issparse(B) else B
            out[r0:r0 + B.shape[0], c0:c0 + B.shape[1]] += B
        return out

    def _build_fixed_jacobian(self):
        m = self.model
        n1, n2, n3 = m.n1, m.n2, m.n3
        J = m.J_mat if not sp.issparse(m.J_mat) else m.J_mat.tocsr()
        R = m.R_mat if not sp.issparse(m.R_mat) else m.R_mat.tocsr()
        M = J - R
        if self.mode == "sparse" and not sp.issparse(M):
            M = sp.csr_matrix(M)
        r = (0, n1, n1 + n2, n1 + n2 + n3)
        self.M_blocks = [[M[r[a]:r[a + 1], r[b]:r[b + 1]] for b in range(3)] for a in range(3)]

        s1, s2, _ = self.sizes
        roff = (0, s1, s1 + s2)
        P_test = (self.PQ1, self.PQ1, self.PQ3)
        dims = (n1, n2, n3)
        blocks = []
        for a in range(3):
            if dims[a] == 0:
                continue
            PD = P_test[a] @ self.DQN       # cols Theta1
            PF = P_test[a] @ self.PhiQ      # cols C3
            if n1:
                blocks.append((roff[a], 0, -self._kron(PD, self.M_blocks[a][0])))
            if n3:
                blocks.append((roff[a], s1 + s2, -self._kron(PF, self.M_blocks[a][2])))
        if n2:
            blocks.append((roff[1], s1, self._kron(self.LHS2, np.eye(n2))))
        self.T0 = self._accumulate(blocks)
        # Weights of the projection coupling, per test block.
        self.C1q = self.PQ1 @ self.PiQpi    # (k, n_pi)
        self.C3q = self.PQ3 @ self.PiQpi    # (k+1, n_pi)

    def jacobian_analytic(self, cache):
        m = self.model
        n1, n2 = m.n1, m.n2
        Z1, Z2 = cache["Z1"], cache["Z2"]
        s1, s2, _ = self.sizes
        roff = (0, s1, s1 + s2)
        coff = (0, s1)
        blocks = []
        for l in range(self.n_pi):
            H = m.hess(Z1[l], Z2[l])
            if self.mode == "sparse" and not sp.issparse(H):
                H = sp.csr_matrix(H)
            outer1 = np.outer(self.P1[:, l], self.ApiN[l, :])
            Hb = [[H[:n1, :n1], H[:n1, n1:]], [H[n1:, :n1], H[n1:, n1:]]]
            for b in range(2):
                if n1 and Hb[0][b].shape[1]:
                    blocks.append((0, coff[b], self._kron(outer1, Hb[0][b])))
            if n2 == 0:
                continue
            # Coupling through the projected gradient in the zeta argument.
            Cq = (self.C1q, self.C1q, self.C3q)
            for a in range(3):
                Ma2 = self.M_blocks[a][1]
                if Ma2.shape[0] == 0:
                    continue
                outer_a = np.outer(Cq[a][:, l], self.ApiN[l, :])
                for b in range(2):
                    if Hb[1][b].shape[1] == 0:
                        continue
                    blocks.append((roff[a], coff[b], -self._kron(outer_a, Ma2 @ Hb[1][b])))
        return self.T0 + self._accumulate(blocks)

    # -- finite-difference Jacobian --------------------------------------

    def jacobian_fd(self, theta, a1, a2, src_Q, F0):
        J = np.empty((self.dim, self.dim))
        for i in range(self.dim):
            h = FD_STEP * (1.0 + abs(theta[i]))
            pert = theta.copy()
            pert[i] += h
            Fi, _ = self.residual(pert, a1, a2, src_Q)
            J[:, i] = (Fi - F0) / h
        return J

    def solve_linear(self, J, rhs, step_scale: float = 1.0):
        """Newton step from ``J delta = rhs``.

        The per-interval system can be structurally rank-deficient (for
        instance when the dissipation operator has a kernel that the
        block-3 test space cannot see, as with pure-Neumann diffusion), so
        the dense path always takes the minimum-norm least-squares step.
        The sparse path tries the fast LU first and falls back to dense
        least squares when the square solve returns an absurdly large or
        non-finite step, remembering the outcome for later intervals.
        Returns the step and whether the system was rank-deficient.
        """
        try:
            if self.mode == "sparse":
                if not self._prefer_lstsq:
                    delta = spla.splu(sp.csc_matrix(J)).solve(rhs)
                    if np.all(np.isfinite(delta)) \
                            and np.linalg.norm(delta) <= 1e6 * step_scale:
                        return delta, False
                    self._prefer_lstsq = True
                return _min_norm_step(J.toarray(), rhs)
            return _min_norm_step(np.asarray(J), rhs)
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise LinearSolveFailedError(f"Newton linear solve failed: {exc}") from exc


def _interval_source(model, u, forcing, t0, ops):
    """Source samples B u + g at the interval's quadrature nodes."""
    pts = t0 + ops.x_q
    src = np.zeros((ops.n_q, model.n))
    u_fn = u if u is not None else model.default_u
    for l, t in enumerate(pts):
        if u_fn is not None:
            src[l] += model.source(u_fn(t), t)
        if forcing is not None:
            src[l] += np.asarray(forcing(t), dtype=float)
    return src


def assemble_residual(model, interval, start_values, theta, u=None, params=None, forcing=None):
    """Residual of the per-interval nonlinear system at coefficients ``theta``.

    ``start_values`` are the (z1, z2) values at the left endpoint;
    ``theta`` stacks the free coefficients (k per component of blocks 1 and
    2, k + 1 per component of block 3).  Convenience wrapper around the
    cached fast path used by :func:`step`.
    """
    if params is None:
        raise DimensionMismatchError("params is required")
    a, b = float(interval[0]), float(interval[1])
    ops = _IntervalOps(model, params, b - a)
    theta = np.asarray(theta, dtype=float)
    if theta.shape[0] != ops.dim:
        raise DimensionMismatchError(
            f"expected {ops.dim} free coefficients, got {theta.shape[0]}"
        )
    a1 = np.asarray(start_values[0], dtype=float)
    a2 = np.asarray(start_values[1], dtype=float)
    src = _interval_source(model, u, forcing, a, ops)
    F, _ = ops.residual(theta, a1, a2, src)
    return F


def _newton(ops, a1, a2, src_Q, theta0, interval_index=None):
    """Newton iteration for one interval.

    Convergence means the final residual norm stayed within
    ``1e-6 (1 + initial norm)``.  Rank-deficient systems may carry an
    irreducible least-squares residual (the scheme equations can be
    slightly inconsistent under quadrature-sampled sources); those count
    as converged once the iteration is stationary, i.e. the last step is
    negligible relative to the coefficients.
    """
    params = ops.params
    theta = theta0.copy()
    F, cache = ops.residual(theta, a1, a2, src_Q)
    norms = [float(np.linalg.norm(F))]
    iterations = 0
    rank_deficient = False
    step_norm = np.inf
    for _ in range(params.newton_iters):
        if params.newton_tol is not None and norms[-1] < params.newton_tol:
            break
        scale = 1.0 + float(np.linalg.norm(theta))
        if rank_deficient and step_norm <= 1e-12 * scale:
            break
        if ops.mode == "fd":
            J = ops.jacobian_fd(theta, a1, a2, src_Q, F)
        else:
            J = ops.jacobian_analytic(cache)
        try:
            delta, deficient = ops.solve_linear(J, -F, step_scale=scale)
        except LinearSolveFailedError as exc:
            exc.args = (f"interval {interval_index}: {exc.args[0]}",)
            raise
        rank_deficient = rank_deficient or deficient
        step_norm = float(np.linalg.norm(delta))
        theta = theta + delta
        F, cache = ops.residual(theta, a1, a2, src_Q)
        norms.append(float(np.linalg.norm(F)))
        iterations += 1
    converged = norms[-1] <= 1e-6 * (1.0 + norms[0])
    if not converged and rank_deficient:
        converged = step_norm <= 1e-9 * (1.0 + float(np.linalg.norm(theta)))
    if not converged:
        raise NewtonDivergedError(
            f"interval {interval_index}: residual {norms[-1]:.3e} "
            f"(started at {norms[0]:.3e}) after {iterations} iterations",
            interval_index=interval_index,
        )
    return theta, cache, NewtonReport(iterations, norms, converged, rank_deficient)


def step(model, interval, start_values, u=None, params=None, forcing=None,
         z3_guess=None, theta0=None, ops=None):
    """Solve one interval; returns the segment triple and a Newton report.

    The initial guess is the constant-one polynomial for the jump block on
    the very first interval (pass ``z3_guess`` with the previous endpoint
    to continue a trajectory) and the constant continuation of
    ``start_values`` for the continuous blocks.
    """
    if params is None:
        raise DimensionMismatchError("params is required")
    t0, t1 = float(interval[0]), float(interval[1])
    if ops is None:
        ops = _IntervalOps(model, params, t1 - t0)
    a1 = np.asarray(start_values[0], dtype=float)
    a2 = np.asarray(start_values[1], dtype=float)
    if a1.shape[0] != model.n1 or a2.shape[0] != model.n2:
        raise DimensionMismatchError("start values do not match block dimensions")
    src = _interval_source(model, u, forcing, t0, ops)
    if theta0 is None:
        theta0 = np.zeros(ops.dim)
        guess = np.ones(model.n3) if z3_guess is None else np.asarray(z3_guess, dtype=float)
        C3 = np.outer(ops.e1coef, guess)
        theta0[ops.sizes[0] + ops.sizes[1]:] = C3.ravel()
    theta, cache, report = _newton(ops, a1, a2, src, theta0)
    segs = _segments(ops, cache, t0, t1)
    return segs, report


def _segments(ops, cache, t0, t1):
    return (
        PolySegment(t0, t1, cache["C1"]),
        PolySegment(t0, t1, cache["C2"]),
        PolySegment(t0, t1, cache["C3"]),
    )


def solve(model, grid: TimeGrid, initial, u=None, params=None, forcing=None):
    """March the scheme over ``grid`` from ``initial = (z1, z2, z3)``.

    ``initial[2]`` seeds the Newton guess for the jump block only; the
    scheme itself determines z3 on every interval, so inconsistent values
    are corrected by the first step.  Returns the trajectory and the
    per-step energy audit with

        lhs_j = H(z(t_j)) - H(z(t_{j-1})),
        rhs_j = Q_j( -<R(zeta), zeta> + <B u + g, zeta> ).

    Raises
    ------
    NewtonDivergedError
        With the failing interval index if a step does not converge.
    """
    if params is None:
        raise DimensionMismatchError("params is required")
    pts = grid.points
    a1 = np.asarray(initial[0], dtype=float).copy()
    a2 = np.asarray(initial[1], dtype=float).copy()
    z3_prev = None if initial[2] is None else np.asarray(initial[2], dtype=float)

    ops_cache: dict[float, _IntervalOps] = {}
    seg1, seg2, seg3 = [], [], []
    H = np.empty(grid.m + 1)
    lhs = np.empty(grid.m)
    rhs = np.empty(grid.m)
    diss = np.empty(grid.m)
    supp = np.empty(grid.m)
    H[0] = model.hamiltonian(a1, a2)

    u_fn = u if u is not None else model.default_u
    for j in range(grid.m):
        t0, t1 = pts[j], pts[j + 1]
        dt = t1 - t0
        ops = ops_cache.get(dt)
        if ops is None:
            ops = _IntervalOps(model, params, dt)
            ops_cache[dt] = ops
        src = _interval_source(model, u, forcing, t0, ops)
        theta0 = np.zeros(ops.dim)
        guess = np.ones(model.n3) if z3_prev is None else z3_prev
        theta0[ops.sizes[0] + ops.sizes[1]:] = np.outer(ops.e1coef, guess).ravel()
        try:
            theta, cache, _ = _newton(ops, a1, a2, src, theta0, interval_index=j + 1)
        except NewtonDivergedError:
            raise
        s1, s2, s3 = _segments(ops, cache, t0, t1)
        seg1.append(s1)
        seg2.append(s2)
        seg3.append(s3)

        a1, a2 = s1.eval(t1), s2.eval(t1)
        z3_prev = s3.eval(t1)
        H[j + 1] = model.hamiltonian(a1, a2)
        lhs[j] = H[j + 1] - H[j]
        d, s = _quadrature_rates(model, ops, cache["zeta"], src)
        diss[j], supp[j] = d, s
        rhs[j] = -d + s

    traj = Trajectory(grid=grid, k=params.k, seg1=seg1, seg2=seg2, seg3=seg3)
    audit = EnergyAudit(t=pts.copy(), H=H, lhs=lhs, rhs=rhs, dissipation=diss, supply=supp)
    return traj, audit


def _quadrature_rates(model, ops, zeta, src_Q):
    d = 0.0
    s = 0.0
    for l in range(ops.n_q):
        d += ops.w_q[l] * float(zeta[l] @ model.apply_R(zeta[l]))
        s += ops.w_q[l] * float(zeta[l] @ src_Q[l])
    return d, s


@dataclass
class ManufacturedProblem:
    """A model with a known solution and the forcing that enforces it.

    ``reference(t)`` returns the exact block values; ``forcing`` is the
    extra additive source that makes the reference solve the model
    equations with the input ``u``.
    """

    model: EnergyModel
    reference: Callable
    forcing: Callable | None
    initial: tuple
    u: Callable | None = None
    label: str = ""


def write_trajectory_csv(traj: Trajectory, ts, path):
    """Write ``(t, block, component, value)`` rows sampled at ``ts``."""
    vals = traj.eval_many(ts)
    with open(path, "w", newline="\n") as fh:
        fh.write("t,block,component,value\n")
        for i, t in enumerate(np.asarray(ts, dtype=float)):
            for b in range(3):
                row = vals[b][i]
                for c in range(row.shape[0]):
                    fh.write(f"{t:.17g},{b + 1},{c},{row[c]:.17g}\n")


def write_energy_audit_csv(audit: EnergyAudit, path):
    """Write ``(j, t_j, H, lhs, rhs, abs_err, rel_err)`` per step."""
    denom = audit.normalizer
    with open(path, "w", newline="\n") as fh:
        fh.write("j,t_j,H,lhs,rhs,abs_err,rel_err\n")
        for j in range(audit.lhs.size):
            abs_err = abs(audit.lhs[j] - audit.rhs[j])
            rel = abs_err / denom if denom > 0 else np.nan
            fh.write(
                f"{j + 1},{audit.t[j + 1]:.17g},{audit.H[j + 1]:.17g},"
                f"{audit.lhs[j]:.17g},{audit.rhs[j]:.17g},{abs_err:.17g},{rel:.17g}\n"
            )
