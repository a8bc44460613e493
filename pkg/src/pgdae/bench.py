"""Error metrics, convergence studies, and energy-audit reporting.

State errors follow the benchmark convention: the maximum over a reference
grid of the Euclidean distance between reference and computed states,
normalized by the largest reference norm, once for the non-algebraic
blocks (z1, z2) and once for all blocks.  The reference grid refines the
finest tested step size by a factor of eight so that interior polynomial
values enter the maximum.

The energy-audit recomputation here deliberately re-derives every
quadrature quantity from the stored trajectory (fresh bases, fresh rules,
the projection module for the projected gradient) instead of reusing the
stepper's cached node data; agreement of the two pathways is itself a
regression check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateNormalizationError, EmptyGridError
from .model import EnergyModel
from .polybasis import PolySegment, gauss_rule
from .projection import project
from .timestepper import (
    EnergyAudit,
    ManufacturedProblem,
    SchemeParams,
    TimeGrid,
    Trajectory,
    solve,
)

# Errors above this are considered pre-asymptotic and the coarsest such
# point is dropped before slope fitting.
PREASYMPTOTIC_ERROR = 0.5


@dataclass
class StateErrors:
    """Relative sup-norm state errors against a reference."""

    e_nonalg: float
    e_full: float


@dataclass
class ConvergenceResult:
    """Errors and fitted log-log slopes over a list of step sizes."""

    taus: list
    e_nonalg: list
    e_full: list
    slope_nonalg: float
    slope_full: float
    intercept_nonalg: float
    intercept_full: float
    meta: dict = field(default_factory=dict)


@dataclass
class EnergyAuditReport:
    """Per-step relative energy-balance errors of a solved trajectory."""

    rel_errors: np.ndarray
    max_rel_error: float
    normalizer: float
    absolute: bool = False


def _stack_reference(reference, ts):
    vals1, vals2, vals3 = [], [], []
    for t in ts:
        z1, z2, z3 = reference(t)
        vals1.append(np.atleast_1d(z1))
        vals2.append(np.atleast_1d(z2))
        vals3.append(np.atleast_1d(z3))
    return np.array(vals1), np.array(vals2), np.array(vals3)


def state_errors(reference, traj: Trajectory, ts) -> StateErrors:
    """Relative errors of ``traj`` against ``reference(t) -> (z1, z2, z3)``.

    Raises
    ------
    EmptyGridError
        If ``ts`` is empty.
    ZeroDivisionError
        If the reference vanishes identically on the grid.
    """
    ts = np.asarray(ts, dtype=float)
    if ts.size == 0:
        raise EmptyGridError("state errors need a nonempty evaluation grid")
    r1, r2, r3 = _stack_reference(reference, ts)
    v1, v2, v3 = traj.eval_many(ts)

    def sup(rows):
        return float(np.max(np.linalg.norm(rows, axis=1))) if rows.shape[1] else 0.0

    diff_na = np.hstack([v1 - r1, v2 - r2])
    ref_na = np.hstack([r1, r2])
    diff_all = np.hstack([diff_na, v3 - r3])
    ref_all = np.hstack([ref_na, r3])
    denom_na, denom_all = sup(ref_na), sup(ref_all)
    if denom_na == 0.0 or denom_all == 0.0:
        raise ZeroDivisionError("reference trajectory vanishes on the grid")
    return StateErrors(e_nonalg=sup(diff_na) / denom_na, e_full=sup(diff_all) / denom_all)


def fit_slope(taus, errors):
    """Least-squares slope/intercept of log(error) against log(tau).

    The coarsest point is dropped when its error exceeds the
    pre-asymptotic threshold.
    """
    taus = np.asarray(taus, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if taus.size < 3:
        raise EmptyGridError("slope fitting needs at least three step sizes")
    order = np.argsort(taus)[::-1]
    taus, errors = taus[order], errors[order]
    if errors[0] > PREASYMPTOTIC_ERROR and taus.size > 3:
        taus, errors = taus[1:], errors[1:]
    slope, intercept = np.polyfit(np.log(taus), np.log(errors), 1)
    return float(slope), float(intercept)


def reference_grid(T: float, tau_min: float, t0: float = 0.0) -> np.ndarray:
    """Uniform evaluation grid with spacing ``tau_min / 8``."""
    m = int(round((T - t0) / (tau_min / 8.0)))
    return t0 + np.arange(m + 1) * ((T - t0) / m)


def convergence_study(solve_for_tau, reference, tau_list, T: float,
                      meta: dict | None = None) -> ConvergenceResult:
    """Run ``solve_for_tau`` over ``tau_list`` and fit convergence orders.

    ``solve_for_tau(tau)`` must return a :class:`Trajectory` on ``[0, T]``;
    failures propagate annotated with the step size.
    """
    tau_list = sorted(tau_list, reverse=True)
    if len(tau_list) < 3:
        raise EmptyGridError("a convergence study needs at least three step sizes")
    ts = reference_grid(T, min(tau_list))
    e_na, e_all = [], []
    for tau in tau_list:
        try:
            traj = solve_for_tau(tau)
        except Exception as exc:
            exc.args = (f"tau={tau}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        err = state_errors(reference, traj, ts)
        e_na.append(err.e_nonalg)
        e_all.append(err.e_full)
    s_na, i_na = fit_slope(tau_list, e_na)
    s_all, i_all = fit_slope(tau_list, e_all)
    return ConvergenceResult(
        taus=list(tau_list), e_nonalg=e_na, e_full=e_all,
        slope_nonalg=s_na, slope_full=s_all,
        intercept_nonalg=i_na, intercept_full=i_all,
        meta=meta or {},
    )


def manufactured_convergence(problem: ManufacturedProblem, params: SchemeParams,
                             tau_list, T: float) -> ConvergenceResult:
    """Convergence study for a manufactured problem at fixed scheme params."""

    def solve_for_tau(tau):
        m = int(round(T / tau))
        if abs(m * tau - T) > 1e-12 * T:
            raise EmptyGridError(f"step size {tau} does not divide the horizon {T}")
        grid = TimeGrid.uniform(T, m)
        traj, _ = solve(problem.model, grid, problem.initial, u=problem.u,
                        params=params, forcing=problem.forcing)
        return traj

    meta = {"label": problem.label, "k": params.k,
            "n_q": params.quad_nodes, "n_pi": params.proj_nodes}
    return convergence_study(solve_for_tau, problem.reference, tau_list, T, meta=meta)


def energy_audit_report(audit: EnergyAudit) -> EnergyAuditReport:
    """Relative per-step balance errors, or absolute ones when degenerate.

    When every energy increment vanishes the relative error is undefined;
    the report then carries the absolute defects with ``absolute=True``.
    """
    if audit.lhs.size == 0:
        raise DegenerateNormalizationError("audit holds no steps")
    denom = audit.normalizer
    defects = np.abs(audit.lhs - audit.rhs)
    if denom == 0.0:
        return EnergyAuditReport(
            rel_errors=defects, max_rel_error=float(np.max(defects)),
            normalizer=0.0, absolute=True,
        )
    rel = defects / denom
    return EnergyAuditReport(
        rel_errors=rel, max_rel_error=float(np.max(rel)), normalizer=denom,
    )


def recompute_energy_audit(model: EnergyModel, traj: Trajectory,
                           params: SchemeParams, u=None, forcing=None) -> EnergyAudit:
    """Re-derive the per-step energy audit from a stored trajectory.

    Independent of the stepper's internal bookkeeping: bases, quadrature
    nodes, and the projected gradient are rebuilt from scratch on every
    interval.
    """
    pts = traj.grid.points
    m = traj.grid.m
    n1, n2 = model.n1, model.n2
    H = np.empty(m + 1)
    lhs = np.empty(m)
    rhs = np.empty(m)
    diss = np.empty(m)
    supp = np.empty(m)
    u_fn = u if u is not None else model.default_u

    z1, z2, _ = traj.eval(pts[0])
    H[0] = model.hamiltonian(z1, z2)
    for j in range(m):
        t0, t1 = pts[j], pts[j + 1]
        s1, s2, s3 = traj.seg1[j], traj.seg2[j], traj.seg3[j]
        z1e, z2e = s1.eval(t1), s2.eval(t1)
        H[j + 1] = model.hamiltonian(z1e, z2e)
        lhs[j] = H[j + 1] - H[j]

        def grad2_of_t(t, s1=s1, s2=s2):
            return model.grad2(s1.eval(t), s2.eval(t))

        proj = project(grad2_of_t, (t0, t1), params.k, params.proj_nodes) if n2 \
            else None
        dpoly = PolySegment(t0, t1, s1.derivative_coeffs())
        nodes, w = gauss_rule(params.quad_nodes).scaled(t0, t1)
        d_j = s_j = 0.0
        for t, wl in zip(nodes, w):
            parts = [dpoly.eval(t) if n1 else np.zeros(0)]
            parts.append(proj.eval(t) if n2 else np.zeros(0))
            parts.append(s3.eval(t))
            zeta = np.concatenate(parts)
            d_j += wl * float(zeta @ model.apply_R(zeta))
            src = np.zeros(model.n)
            if u_fn is not None:
                src += model.source(u_fn(t), t)
            if forcing is not None:
                src += np.asarray(forcing(t), dtype=float)
            s_j += wl * float(zeta @ src)
        diss[j], supp[j] = d_j, s_j
        rhs[j] = -d_j + s_j
    return EnergyAudit(t=pts.copy(), H=H, lhs=lhs, rhs=rhs, dissipation=diss, supply=supp)


def write_convergence_csv(results, path):
    """Long-form CSV of one or more convergence results."""
    results = results if isinstance(results, (list, tuple)) else [results]
    with open(path, "w", newline="\n") as fh:
        fh.write("k,tau,e_nonalg,e_full\n")
        for res in results:
            k = res.meta.get("k", "")
            for tau, e1, e2 in zip(res.taus, res.e_nonalg, res.e_full):
                fh.write(f"{k},{tau:.17g},{e1:.17g},{e2:.17g}\n")
