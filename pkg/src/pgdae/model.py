"""Finite-dimensional energy-based models with three state blocks.

A model couples a Hamiltonian ``H(z1, z2)`` to the dynamics

    [ grad_1 H(z1, z2) ]           [ dz1/dt            ]
    [ dz2/dt           ]  = (J - R)[ grad_2 H(z1, z2)  ]  +  B u
    [ 0                ]           [ z3                ]

where ``J`` is skew (``v . J(v) = 0``), ``R`` is dissipative
(``v . R(v) >= 0``), and the third block carries algebraic variables that
enter without time derivatives.  Any block may be empty.  Gradient systems
(only ``z1``), port-Hamiltonian systems (only ``z2``), and DAEs with
constraints (``z3`` nonempty) are all instances.

Models are immutable by convention: every callable they carry must be pure
and re-entrant, which is what allows parallel parameter sweeps to share
one model object.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatchError, NotSPDError
from .linalg import as_dense

Array = np.ndarray


def _zeros_fn(n):
    z = np.zeros(n)
    return lambda *args: z


@dataclass
class EnergyModel:
    """Energy-based model in coefficient variables.

    ``grad1``/``grad2`` must be the exact partial gradients of
    ``hamiltonian`` (this is checked by :func:`validate_structure`).
    ``apply_J``/``apply_R`` act on full stacked vectors of length
    ``n1 + n2 + n3`` and may be nonlinear.  ``apply_B`` maps an input value
    and a time to a stacked vector.

    The optional analytic structure (``hess`` for the Hamiltonian,
    ``J_mat``/``R_mat``/``B_mat`` for linear operators) enables the exact
    Newton Jacobian in the time stepper; without it the stepper falls back
    to finite differences on the residual.
    """

    n1: int
    n2: int
    n3: int
    hamiltonian: Callable[[Array, Array], float]
    grad1: Callable[[Array, Array], Array]
    grad2: Callable[[Array, Array], Array]
    apply_J: Callable[[Array], Array]
    apply_R: Callable[[Array], Array]
    apply_B: Callable | None = None
    input_dim: int = 0
    hess: Callable[[Array, Array], Array] | None = None
    J_mat: object | None = None
    R_mat: object | None = None
    B_mat: object | None = None
    default_u: Callable[[float], Array] | None = None
    name: str = ""

    @property
    def n(self) -> int:
        return self.n1 + self.n2 + self.n3

    def split(self, v: Array):
        n1, n2 = self.n1, self.n2
        return v[:n1], v[n1:n1 + n2], v[n1 + n2:]

    def source(self, u_value, t: float) -> Array:
        if self.apply_B is None or u_value is None:
            return np.zeros(self.n)
        return self.apply_B(u_value, t)

    @property
    def has_analytic_structure(self) -> bool:
        return self.hess is not None and self.J_mat is not None and self.R_mat is not None


@dataclass
class LinearBlockOperators:
    """Linear structure/dissipation/input operators in block-matrix form.

    ``Jbar`` and ``Rbar`` act on stacked coefficient vectors and must be
    skew-symmetric and PSD-symmetric-part respectively.  ``M2`` is the mass
    matrix of block 2 (``None`` for a plain coefficient space, meaning the
    identity).
    """

    n1: int
    n2: int
    n3: int
    Jbar: object
    Rbar: object
    Bbar: object | None = None
    M2: object | None = None

    @property
    def n(self) -> int:
        return self.n1 + self.n2 + self.n3


def _check_linear_blocks(ops: LinearBlockOperators, rtol=1e-12, psd_tol=1e-10, n_samples=256):
    n = ops.n
    for label, mat in (("Jbar", ops.Jbar), ("Rbar", ops.Rbar)):
        if mat.shape != (n, n):
            raise DimensionMismatchError(f"{label} has shape {mat.shape}, expected {(n, n)}")
    J = ops.Jbar
    scale = max(_mat_norm(J), 1e-300)
    if _mat_norm(J + J.T) > rtol * scale:
        raise DimensionMismatchError("Jbar is not skew-symmetric at the stated tolerance")
    R = ops.Rbar
    rscale = max(_mat_norm(R), 1e-300)
    rng = np.random.default_rng(0)
    V = rng.standard_normal((n_samples, n))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    quad = np.einsum("ij,ij->i", V, _apply_mat(R, V.T).T)
    if np.min(quad) < -psd_tol * rscale:
        raise NotSPDError("Rbar has a negative quadratic form on sampled directions")


def _mat_norm(A):
    if sp.issparse(A):
        return spla.norm(A, ord=np.inf) if A.nnz else 0.0
    return float(np.max(np.abs(A))) if A.size else 0.0


def _apply_mat(A, x):
    return A @ x


def from_linear_blocks(
    ops: LinearBlockOperators,
    hamiltonian,
    grad1,
    grad2=None,
    hess=None,
    default_u=None,
    name: str = "",
) -> EnergyModel:
    """Assemble an :class:`EnergyModel` from linear block operators.

    The block-2 mass matrix is folded into the operators so that the model
    equations hold in plain coefficient variables: with
    ``K = diag(I, M2^{-1}, I)`` the model applies ``K Jbar K`` and
    ``K Rbar K`` (a congruence, so skewness and dissipativity survive) and
    ``K Bbar``.

    Raises
    ------
    NotSPDError
        If ``M2`` is not symmetric positive definite.
    DimensionMismatchError
        If operator shapes are inconsistent with the block dimensions.
    """
    _check_linear_blocks(ops)
    n1, n2, n3 = ops.n1, ops.n2, ops.n3
    n = ops.n
    grad2 = grad2 if grad2 is not None else _zeros_fn(n2)

    if ops.M2 is None or n2 == 0:
        apply_K = None
        J_mat, R_mat, B_mat = ops.Jbar, ops.Rbar, ops.Bbar
    else:
        M2 = as_dense(ops.M2)
        if M2.shape != (n2, n2):
            raise DimensionMismatchError(f"M2 has shape {M2.shape}, expected {(n2, n2)}")
        if np.max(np.abs(M2 - M2.T)) > 1e-12 * max(np.max(np.abs(M2)), 1e-300):
            raise NotSPDError("M2 is not symmetric")
        try:
            np.linalg.cholesky(M2)
        except np.linalg.LinAlgError as exc:
            raise NotSPDError(f"M2 is not positive definite: {exc}") from exc
        M2inv = np.linalg.inv(M2)
        Kdiag = sp.block_diag(
            (sp.eye(n1), sp.csr_matrix(M2inv), sp.eye(n3)), format="csr"
        )
        apply_K = lambda v: Kdiag @ v
        J_mat = Kdiag @ ops.Jbar @ Kdiag
        R_mat = Kdiag @ ops.Rbar @ Kdiag
        B_mat = None if ops.Bbar is None else Kdiag @ ops.Bbar

    def apply_J(v):
        return J_mat @ v

    def apply_R(v):
        return R_mat @ v

    if B_mat is None:
        apply_B, input_dim = None, 0
    else:
        input_dim = B_mat.shape[1]

        def apply_B(u, t):
            return B_mat @ np.atleast_1d(np.asarray(u, dtype=float))

    return EnergyModel(
        n1=n1, n2=n2, n3=n3,
        hamiltonian=hamiltonian, grad1=grad1, grad2=grad2,
        apply_J=apply_J, apply_R=apply_R,
        apply_B=apply_B, input_dim=input_dim,
        hess=hess, J_mat=J_mat, R_mat=R_mat, B_mat=B_mat,
        default_u=default_u, name=name,
    )


@dataclass
class ValidationReport:
    """Sampled structure diagnostics for a model."""

    max_skew: float
    min_dissipation: float
    grad_mismatch: float
    n_samples: int
    seed: int
    failures: list = field(default_factory=list)

    def ok(self, tol_structure: float = 1e-10, tol_grad: float = 1e-5) -> bool:
        return (
            self.max_skew <= tol_structure
            and self.min_dissipation >= -tol_structure
            and self.grad_mismatch <= tol_grad
        )


def validate_structure(model: EnergyModel, n_samples: int = 1000, seed: int = 0) -> ValidationReport:
    """Sample the defining structure properties of a model.

    Draws ``n_samples`` pseudorandom unit vectors ``v`` and records
    ``max |v . J(v)|`` and ``min v . R(v)``.  The gradients are checked
    against central finite differences of the Hamiltonian along random unit
    directions with step 1e-6 (a directional derivative check, so the cost
    stays at two Hamiltonian evaluations per sample); the mismatch is
    reported relative to the largest directional derivative seen.
    """
    rng = np.random.default_rng(seed)
    n = model.n
    max_skew = 0.0
    min_diss = np.inf if n else 0.0
    for _ in range(n_samples):
        v = rng.standard_normal(n)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            continue
        v /= nv
        max_skew = max(max_skew, abs(float(v @ model.apply_J(v))))
        min_diss = min(min_diss, float(v @ model.apply_R(v)))

    n12 = model.n1 + model.n2
    step = 1e-6
    mismatches, magnitudes = [0.0], [0.0]
    if n12 > 0:
        for _ in range(n_samples):
            c1 = rng.standard_normal(model.n1)
            c2 = rng.standard_normal(model.n2)
            d = rng.standard_normal(n12)
            d /= np.linalg.norm(d)
            d1, d2 = d[:model.n1], d[model.n1:]
            hp = model.hamiltonian(c1 + step * d1, c2 + step * d2)
            hm = model.hamiltonian(c1 - step * d1, c2 - step * d2)
            fd = (hp - hm) / (2 * step)
            an = float(np.dot(model.grad1(c1, c2), d1) + np.dot(model.grad2(c1, c2), d2))
            mismatches.append(abs(fd - an))
            magnitudes.append(abs(an))
    denom = max(max(magnitudes), 1.0)
    report = ValidationReport(
        max_skew=max_skew,
        min_dissipation=float(min_diss),
        grad_mismatch=max(mismatches) / denom,
        n_samples=n_samples,
        seed=seed,
    )
    if not report.ok():
        report.failures.append(
            f"skew={report.max_skew:.2e} dissipation={report.min_dissipation:.2e} "
            f"grad={report.grad_mismatch:.2e}"
        )
    return report


def energy_rate(model: EnergyModel, v: Array, u_value=None, t: float = 0.0):
    """Instantaneous dissipation and supply rates along direction ``v``.

    Returns ``(v . R(v), v . B(u, t))``; these are the two integrands whose
    quadrature enters the per-step energy balance.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[0] != model.n:
        raise DimensionMismatchError(f"vector length {v.shape[0]}, expected {model.n}")
    dissipation = float(v @ model.apply_R(v))
    supply = float(v @ model.source(u_value, t))
    return dissipation, supply
