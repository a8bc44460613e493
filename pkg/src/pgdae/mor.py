"""Structure-preserving model order reduction by POD and Galerkin projection.

Reduction replaces each block by its coordinates in an orthonormal basis
``V_i`` and applies the full operators through the congruence
``J~ = V^T J V`` (likewise ``R~``, ``B~``) with the reduced energy
``H~(z~) = H(V z~)``.  Skewness and dissipativity survive congruence, so
the reduced model satisfies the same energy balance and dissipation
inequality as the full one.  Evaluations intentionally call the full-order
operators, so their cost scales with the full dimension; cheap surrogate
evaluation (hyperreduction) is out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatchError, RankTooLowError
from .linalg import as_dense, thin_svd
from .model import EnergyModel
from .timestepper import Trajectory


@dataclass
class ReducedBasis:
    """Per-block orthonormal reduction matrices ``V_i`` of shape (n_i, r_i)."""

    V1: np.ndarray
    V2: np.ndarray
    V3: np.ndarray

    def __post_init__(self):
        self.V1 = np.atleast_2d(np.asarray(self.V1, dtype=float))
        self.V2 = np.atleast_2d(np.asarray(self.V2, dtype=float))
        self.V3 = np.atleast_2d(np.asarray(self.V3, dtype=float))

    @property
    def blocks(self):
        return self.V1, self.V2, self.V3

    def stacked(self) -> np.ndarray:
        """Block-diagonal full-to-reduced matrix ``diag(V1, V2, V3)``."""
        n = sum(V.shape[0] for V in self.blocks)
        r = sum(V.shape[1] for V in self.blocks)
        out = np.zeros((n, r))
        i = j = 0
        for V in self.blocks:
            out[i:i + V.shape[0], j:j + V.shape[1]] = V
            i += V.shape[0]
            j += V.shape[1]
        return out

    @classmethod
    def identity(cls, model: EnergyModel) -> "ReducedBasis":
        return cls(np.eye(model.n1), np.eye(model.n2), np.eye(model.n3))


def pod_basis(snapshots, r: int):
    """First ``r`` left singular vectors of a snapshot matrix.

    ``snapshots`` has one state sample per column.  Returns ``(V, s)`` with
    the full singular value spectrum for decay diagnostics.

    Raises
    ------
    RankTooLowError
        If the r-th singular value is below ``1e-14 s_1``; the caller
        should reduce ``r`` rather than receive a padded basis.
    """
    S = np.asarray(snapshots, dtype=float)
    if S.ndim != 2 or S.shape[1] < 1:
        raise DimensionMismatchError("snapshot matrix needs at least one column")
    if not 1 <= r <= min(S.shape):
        raise DimensionMismatchError(f"rank {r} outside 1..{min(S.shape)}")
    U, s, _ = thin_svd(S)
    if s[0] == 0.0 or s[r - 1] < 1e-14 * s[0]:
        raise RankTooLowError(
            f"singular value {r} of the snapshot matrix is numerically zero"
        )
    return U[:, :r].copy(), s


def snapshot_matrices(traj: Trajectory):
    """Per-block snapshot matrices from the trajectory's grid-point values."""
    z1, z2, z3 = traj.endpoint_values()
    return z1.T, z2.T, z3.T


def reduce_model(model: EnergyModel, basis: ReducedBasis) -> EnergyModel:
    """Galerkin-reduced model on the basis' coefficient space."""
    V1, V2, V3 = basis.blocks
    for V, n, label in ((V1, model.n1, "V1"), (V2, model.n2, "V2"), (V3, model.n3, "V3")):
        if V.shape[0] != n:
            raise DimensionMismatchError(f"{label} has {V.shape[0]} rows, expected {n}")
    r1, r2, r3 = V1.shape[1], V2.shape[1], V3.shape[1]
    V = basis.stacked()

    def lift(v):
        out = np.empty(model.n)
        out[:model.n1] = V1 @ v[:r1]
        out[model.n1:model.n1 + model.n2] = V2 @ v[r1:r1 + r2]
        out[model.n1 + model.n2:] = V3 @ v[r1 + r2:]
        return out

    def hamiltonian(c1, c2):
        return model.hamiltonian(V1 @ c1, V2 @ c2)

    def grad1(c1, c2):
        return V1.T @ model.grad1(V1 @ c1, V2 @ c2)

    def grad2(c1, c2):
        return V2.T @ model.grad2(V1 @ c1, V2 @ c2)

    def apply_J(v):
        return V.T @ model.apply_J(lift(v))

    def apply_R(v):
        return V.T @ model.apply_R(lift(v))

    apply_B = None
    if model.apply_B is not None:
        def apply_B(u, t):
            return V.T @ model.apply_B(u, t)

    J_mat = R_mat = B_mat = None
    if model.J_mat is not None:
        J_mat = V.T @ as_dense(model.J_mat) @ V if not sp.issparse(model.J_mat) \
            else V.T @ (model.J_mat @ V)
    if model.R_mat is not None:
        R_mat = V.T @ as_dense(model.R_mat) @ V if not sp.issparse(model.R_mat) \
            else V.T @ (model.R_mat @ V)
    if model.B_mat is not None:
        B_mat = V.T @ as_dense(model.B_mat) if not sp.issparse(model.B_mat) \
            else (model.B_mat.T @ V).T

    hess = None
    if model.hess is not None:
        V12 = np.zeros((model.n1 + model.n2, r1 + r2))
        V12[:model.n1, :r1] = V1
        V12[model.n1:, r1:] = V2

        def hess(c1, c2):
            H = model.hess(V1 @ c1, V2 @ c2)
            return V12.T @ (H @ V12)

    return EnergyModel(
        n1=r1, n2=r2, n3=r3,
        hamiltonian=hamiltonian, grad1=grad1, grad2=grad2,
        apply_J=apply_J, apply_R=apply_R,
        apply_B=apply_B, input_dim=model.input_dim,
        hess=hess, J_mat=J_mat, R_mat=R_mat, B_mat=B_mat,
        default_u=model.default_u,
        name=f"{model.name}-reduced" if model.name else "reduced",
    )


def project_initial(basis: ReducedBasis, full_initial):
    """Reduced initial coordinates ``z~_i = V_i^T z_i``.

    Algebraic-block consistency is not restored here; re-establish it with
    the reduced model's make-consistent step.
    """
    out = []
    for V, z in zip(basis.blocks, full_initial):
        z = np.asarray(z, dtype=float)
        if z.shape[0] != V.shape[0]:
            raise DimensionMismatchError("initial state does not match the basis")
        out.append(V.T @ z)
    return tuple(out)


def save_basis_csv(basis: ReducedBasis, path):
    """Write the three basis blocks as ``(block, row, col, value)`` rows."""
    with open(path, "w", newline="\n") as fh:
        fh.write("block,row,col,value\n")
        for b, V in enumerate(basis.blocks, start=1):
            for i in range(V.shape[0]):
                for j in range(V.shape[1]):
                    fh.write(f"{b},{i},{j},{V[i, j]:.17g}\n")


def load_basis_csv(path) -> ReducedBasis:
    data = {1: {}, 2: {}, 3: {}}
    with open(path) as fh:
        next(fh)
        for line in fh:
            b, i, j, v = line.strip().split(",")
            data[int(b)][(int(i), int(j))] = float(v)
    blocks = []
    for b in (1, 2, 3):
        if data[b]:
            rows = 1 + max(i for i, _ in data[b])
            cols = 1 + max(j for _, j in data[b])
            V = np.zeros((rows, cols))
            for (i, j), v in data[b].items():
                V[i, j] = v
        else:
            V = np.zeros((0, 0))
        blocks.append(V)
    return ReducedBasis(*blocks)


def save_singular_values_csv(spectra: dict, path):
    """Write singular-value spectra ``{label: values}`` as long-form CSV."""
    with open(path, "w", newline="\n") as fh:
        fh.write("block,index,sigma\n")
        for label, s in spectra.items():
            for i, v in enumerate(np.asarray(s, dtype=float)):
                fh.write(f"{label},{i},{v:.17g}\n")
