"""Dense factorization kernels and sparse storage helpers.

All solvers in this package funnel their dense linear algebra through the
three routines below so that pivot tolerances and error reporting are
uniform.  Sparse matrices use compressed-row storage (scipy CSR), which is
what the finite-element assembly produces and what the matrix-vector
products in the time stepper consume.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import (
    DimensionMismatchError,
    NoConvergenceError,
    RankDeficientError,
    SingularMatrixError,
)

# Pivots below PIVOT_RTOL * max|A| count as zero: double-precision unit
# roundoff with an order of magnitude of headroom.
PIVOT_RTOL = 1e-14


def solve_dense(A, b):
    """Solve the square system ``A x = b`` via LU with partial pivoting.

    Raises
    ------
    SingularMatrixError
        If any pivot magnitude falls below ``PIVOT_RTOL * max|A|``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise DimensionMismatchError(
            f"right-hand side length {b.shape[0]} does not match matrix size {A.shape[0]}"
        )
    scale = np.max(np.abs(A)) if A.size else 0.0
    if scale == 0.0:
        raise SingularMatrixError("matrix is identically zero")
    lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if np.any(pivots < PIVOT_RTOL * scale):
        raise SingularMatrixError(
            f"pivot {pivots.min():.3e} below tolerance {PIVOT_RTOL * scale:.3e}"
        )
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def min_norm_solve(A, b):
    """Minimum-norm solution of the underdetermined system ``A x = b``.

    ``A`` must have full row rank with no more rows than columns.  The
    solution ``x = A^T (A A^T)^{-1} b`` is the unique one orthogonal to the
    null space of ``A``.

    Raises
    ------
    RankDeficientError
        If ``A A^T`` is singular at the pivot tolerance.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatchError("expected a matrix")
    m, n = A.shape
    if m > n:
        raise DimensionMismatchError(f"system has more rows ({m}) than columns ({n})")
    if b.shape[0] != m:
        raise DimensionMismatchError(
            f"right-hand side length {b.shape[0]} does not match row count {m}"
        )
    gram = A @ A.T
    try:
        y = solve_dense(gram, b)
    except SingularMatrixError as exc:
        raise RankDeficientError(f"A A^T is singular: {exc}") from exc
    return A.T @ y


def thin_svd(A):
    """Thin singular value decomposition ``A = U diag(s) V^T``.

    Returns ``(U, s, V)`` with orthonormal columns in ``U`` and ``V`` and
    the singular values sorted in nonincreasing order.

    Raises
    ------
    NoConvergenceError
        If the underlying iterative reduction does not converge.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.size == 0:
        raise DimensionMismatchError("expected a nonempty matrix")
    try:
        U, s, Vh = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceError(f"SVD did not converge: {exc}") from exc
    return U, s, Vh.T


def assemble_csr(rows, cols, values, shape):
    """Build a CSR matrix from COO triplets, summing duplicate entries."""
    out = sp.coo_matrix((values, (rows, cols)), shape=shape).tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


def as_dense(A):
    """Return ``A`` as a dense ndarray, densifying sparse input."""
    if sp.issparse(A):
        return A.toarray()
    return np.asarray(A, dtype=float)
