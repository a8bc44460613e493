"""Nonlinear AC/DC converter benchmark model.

A single nonlinear capacitance (charge ``q_C``), a voltage source (current
``i_S``, voltage ``u_S``), and a resistive network on four vertex
potentials ``phi``:

    A_C dq_C/dt + A_S i_S + A_R G A_R^T phi = 0
    A_C^T phi - dH_C/dq(q_C)                = 0
    A_S^T phi - u_S                         = 0

with ``G = I_5`` and the stored energy ``H_C(q) = q^2/2 + q^4/2``.  Stacking
the rows as ``(dH_C/dq, 0, 0) = A (dq_C/dt, i_S, phi) + B u_S`` gives an
energy-based model with blocks ``z1 = q_C`` (n1 = 1), no z2 block, and the
algebraic block ``z3 = (i_S, phi)`` (n3 = 5); its skew part is
``(A - A^T)/2`` and its dissipative part ``-(A + A^T)/2``.
"""

from __future__ import annotations

import numpy as np

from .errors import RankDeficientError
from .linalg import min_norm_solve
from .model import EnergyModel
from .timestepper import ManufacturedProblem

A_C = np.array([0.0, -1.0, 0.0, 1.0])
A_S = np.array([-1.0, 0.0, 0.0, 0.0])
A_R = np.array(
    [
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, -1.0, 0.0],
        [0.0, -1.0, 0.0, 0.0, -1.0],
    ]
)


def stored_energy(q: float) -> float:
    return 0.5 * q**2 + 0.5 * q**4


def stored_energy_gradient(q: float) -> float:
    return q + 2.0 * q**3


def block_matrix() -> np.ndarray:
    """The 6x6 coefficient matrix acting on ``(dq_C/dt, i_S, phi)``."""
    GR = A_R @ A_R.T
    A = np.zeros((6, 6))
    A[0, 2:] = A_C
    A[1, 2:] = A_S
    A[2:, 0] = -A_C
    A[2:, 1] = -A_S
    A[2:, 2:] = -GR
    return A


def source_voltage(t: float) -> np.ndarray:
    """Benchmark source signal ``u_S(t) = sin(t) - 1``."""
    return np.array([np.sin(t) - 1.0])


def build_circuit() -> EnergyModel:
    """Assemble the converter as an :class:`EnergyModel`."""
    A = block_matrix()
    J = 0.5 * (A - A.T)
    R = -0.5 * (A + A.T)
    B = np.zeros((6, 1))
    B[1, 0] = -1.0

    def hamiltonian(c1, c2):
        return stored_energy(float(c1[0]))

    def grad1(c1, c2):
        return np.array([stored_energy_gradient(float(c1[0]))])

    def grad2(c1, c2):
        return np.zeros(0)

    def hess(c1, c2):
        q = float(c1[0])
        return np.array([[1.0 + 6.0 * q * q]])

    def apply_B(u, t):
        return B @ np.atleast_1d(np.asarray(u, dtype=float))

    return EnergyModel(
        n1=1, n2=0, n3=5,
        hamiltonian=hamiltonian, grad1=grad1, grad2=grad2,
        apply_J=lambda v: J @ v, apply_R=lambda v: R @ v,
        apply_B=apply_B, input_dim=1,
        hess=hess, J_mat=J, R_mat=R, B_mat=B,
        default_u=source_voltage, name="acdc",
    )


def _potential_system() -> np.ndarray:
    return np.vstack([A_C, A_S])


def solve_potentials(rhs) -> np.ndarray:
    """Minimum-norm potentials ``phi`` with ``A_C^T phi, A_S^T phi = rhs``.

    The 2x4 system is underdetermined; the minimum-norm solution is the
    unique reproducible choice.
    """
    phi = min_norm_solve(_potential_system(), np.asarray(rhs, dtype=float))
    if not np.all(np.isfinite(phi)):
        raise RankDeficientError("potential system produced non-finite values")
    return phi


def consistent_initial(q0: float, i0: float, us0: float):
    """Initial state whose potentials satisfy both algebraic voltage rows."""
    phi0 = solve_potentials([stored_energy_gradient(q0), us0])
    return np.array([q0]), np.zeros(0), np.concatenate([[i0], phi0])


def target_state(t: float):
    """Benchmark reference trajectory ``q_C = cos t``, ``i_S = sin t``."""
    q = np.cos(t)
    us = np.sin(t) - 1.0
    phi = solve_potentials([stored_energy_gradient(q), us])
    return np.array([q]), np.zeros(0), np.concatenate([[np.sin(t)], phi])


def manufactured_forcing(t: float) -> np.ndarray:
    """Additive source that makes :func:`target_state` an exact solution.

    ``g = lhs(z) - A (dz1/dt, z3) - B u`` evaluated along the target; the
    two voltage rows vanish identically because the target potentials solve
    them by construction.
    """
    z1, _, z3 = target_state(t)
    q = z1[0]
    dq = -np.sin(t)
    A = block_matrix()
    lhs = np.zeros(6)
    lhs[0] = stored_energy_gradient(q)
    zeta = np.concatenate([[dq], z3])
    Bu = np.zeros(6)
    Bu[1] = -(np.sin(t) - 1.0)
    return lhs - A @ zeta - Bu


def manufactured_problem() -> ManufacturedProblem:
    """Bundle for convergence studies against the known circuit solution."""
    model = build_circuit()
    z10, z20, z30 = target_state(0.0)
    return ManufacturedProblem(
        model=model,
        reference=target_state,
        forcing=manufactured_forcing,
        initial=(z10, z20, z30),
        u=source_voltage,
        label="acdc-manufactured",
    )
