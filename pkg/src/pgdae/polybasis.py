"""Orthonormal Legendre bases and quadrature rules.

The time discretization works with polynomials expressed in scaled Legendre
bases on each interval ``[a, b]``: the p-th basis function is

    phi_p(t) = sqrt((2p - 1) / (b - a)) * P_{p-1}(2 (t - a) / (b - a) - 1)

with ``P_n`` the classical Legendre polynomial, so that the family
``phi_1, ..., phi_{k+1}`` is L2-orthonormal on the interval and ``phi_p``
has polynomial degree ``p - 1``.

Gauss-Legendre rules are stated on the reference interval ``[0, 1]`` with
weights summing to one; symmetric rules on the reference triangle support
the quartic double-well integrands of the finite-element module.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegreeZeroError, NoConvergenceError, OutOfRangeError, UnsupportedRuleError


def legendre_values(n_max: int, x) -> np.ndarray:
    """Values of P_0 .. P_{n_max} at points ``x`` in [-1, 1].

    Returns an array of shape ``(len(x), n_max + 1)`` built with the
    three-term recurrence, which is numerically stable for the small
    degrees used here.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    P = np.empty((x.size, n_max + 1))
    P[:, 0] = 1.0
    if n_max >= 1:
        P[:, 1] = x
    for n in range(1, n_max):
        P[:, n + 1] = ((2 * n + 1) * x * P[:, n] - n * P[:, n - 1]) / (n + 1)
    return P


def _legendre_with_derivative(n: int, x):
    """P_n and P_n' at interior points ``x`` of (-1, 1)."""
    P = legendre_values(n, x)
    Pn = P[:, n]
    Pm = P[:, n - 1] if n >= 1 else np.zeros_like(Pn)
    dPn = n * (x * Pn - Pm) / (x * x - 1.0)
    return Pn, dPn


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature nodes and weights on the reference interval [0, 1]."""

    nodes: np.ndarray
    weights: np.ndarray

    def scaled(self, a: float, b: float):
        """Physical nodes and weights for the interval ``[a, b]``."""
        return a + (b - a) * self.nodes, (b - a) * self.weights

    def integrate(self, f, a: float = 0.0, b: float = 1.0) -> float:
        pts, w = self.scaled(a, b)
        return float(np.dot(w, [f(t) for t in pts]))


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [0, 1], exact for degree <= 2n - 1.

    Nodes are computed by Newton iteration on the Legendre recurrence with
    a 1e-15 residual target, then mapped affinely from [-1, 1].
    """
    if n < 1:
        raise OutOfRangeError(f"need at least one quadrature node, got {n}")
    if n == 1:
        return QuadratureRule(nodes=np.array([0.5]), weights=np.array([1.0]))
    i = np.arange(1, n + 1)
    x = np.cos(np.pi * (4 * i - 1) / (4 * n + 2))
    for _ in range(100):
        Pn, dPn = _legendre_with_derivative(n, x)
        x = x - Pn / dPn
        if np.max(np.abs(Pn)) < 1e-15:
            break
    else:
        raise NoConvergenceError("Gauss node iteration did not reach the residual target")
    _, dPn = _legendre_with_derivative(n, x)
    w = 2.0 / ((1.0 - x * x) * dPn * dPn)
    order = np.argsort(x)
    x, w = x[order], w[order]
    # Symmetrize: nodes come in +/- pairs, weights in equal pairs.
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes=nodes, weights=weights)


@dataclass(frozen=True)
class LegendreBasis:
    """L2-orthonormal polynomial basis of degree ``k`` on ``[a, b]``."""

    k: int
    a: float
    b: float

    def __post_init__(self):
        if self.k < 0:
            raise OutOfRangeError(f"degree must be nonnegative, got {self.k}")
        if not self.b > self.a:
            raise OutOfRangeError(f"empty interval [{self.a}, {self.b}]")

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def scales(self) -> np.ndarray:
        p = np.arange(1, self.k + 2)
        return np.sqrt((2 * p - 1) / self.length)

    def value_matrix(self, ts) -> np.ndarray:
        """Values of all basis functions at ``ts``; shape (len(ts), k + 1)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        x = 2.0 * (ts - self.a) / self.length - 1.0
        return legendre_values(self.k, x) * self.scales

    def left_values(self) -> np.ndarray:
        """Basis values at the left endpoint: sqrt((2p-1)/(b-a)) * (-1)^(p-1)."""
        signs = (-1.0) ** np.arange(self.k + 1)
        return self.scales * signs

    def derivative_matrix(self) -> np.ndarray:
        """Matrix D mapping degree-k coefficients to degree-(k-1) derivative coefficients.

        For a polynomial ``v`` with coefficient vector ``c`` in this basis,
        ``D c`` are the coefficients of ``dv/dt`` in the orthonormal basis of
        degree ``k - 1`` on the same interval.  Closed form from the Legendre
        derivative expansion:

            D[q, p] = 2 sqrt((2p - 1)(2q - 1)) / (b - a)  if q < p and p + q odd
        """
        if self.k == 0:
            raise DegreeZeroError("a degree-zero basis has no derivative matrix")
        D = np.zeros((self.k, self.k + 1))
        for q in range(1, self.k + 1):
            for p in range(q + 1, self.k + 2):
                if (p + q) % 2 == 1:
                    D[q - 1, p - 1] = 2.0 * np.sqrt((2 * p - 1) * (2 * q - 1)) / self.length
        return D


def basis_eval(basis: LegendreBasis, p: int, t: float) -> float:
    """Value of the p-th (1-based) orthonormal basis function at ``t``."""
    if not 1 <= p <= basis.k + 1:
        raise OutOfRangeError(f"basis index {p} outside 1..{basis.k + 1}")
    if not basis.a <= t <= basis.b:
        raise OutOfRangeError(f"point {t} outside [{basis.a}, {basis.b}]")
    return float(basis.value_matrix([t])[0, p - 1])


def basis_derivative_matrix(basis: LegendreBasis) -> np.ndarray:
    return basis.derivative_matrix()


@dataclass
class PolySegment:
    """One vector-valued polynomial piece in the orthonormal Legendre basis.

    ``coeffs`` has shape ``(k + 1, dim)``; column ``i`` holds the basis
    coefficients of component ``i`` on the interval ``[a, b]``.
    """

    a: float
    b: float
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))

    @property
    def k(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    @property
    def basis(self) -> LegendreBasis:
        return LegendreBasis(self.k, self.a, self.b)

    def eval(self, t: float) -> np.ndarray:
        return self.eval_many([t])[0]

    def eval_many(self, ts) -> np.ndarray:
        """Values at ``ts``; shape (len(ts), dim)."""
        return self.basis.value_matrix(ts) @ self.coeffs

    def derivative_coeffs(self) -> np.ndarray:
        """Coefficients of the time derivative in the degree-(k-1) basis."""
        return self.basis.derivative_matrix() @ self.coeffs

    @classmethod
    def constant(cls, a: float, b: float, value) -> "PolySegment":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        coeffs = np.zeros((1, value.size))
        coeffs[0] = value * np.sqrt(b - a)
        return cls(a, b, coeffs)


@dataclass(frozen=True)
class TriangleRule:
    """Symmetric quadrature on the reference triangle (barycentric nodes).

    Weights sum to one; integrals scale with the physical triangle area.
    """

    barycentric: np.ndarray
    weights: np.ndarray
    degree: int


def _orbit(a: float, b: float) -> list:
    return [(a, b, b), (b, a, b), (b, b, a)]


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> TriangleRule:
    """Symmetric triangle rule exact for bivariate polynomials of ``degree``."""
    if degree == 1:
        bary = [(1 / 3, 1 / 3, 1 / 3)]
        w = [1.0]
    elif degree == 2:
        bary = _orbit(2 / 3, 1 / 6)
        w = [1 / 3] * 3
    elif degree == 4:
        bary = _orbit(0.108103018168070, 0.445948490915965)
        w = [0.223381589678011] * 3
        bary += _orbit(0.816847572980459, 0.091576213509771)
        w += [0.109951743655322] * 3
    else:
        raise UnsupportedRuleError(f"no triangle rule for degree {degree}; use 1, 2, or 4")
    b = np.array(bary)
    wts = np.array(w)
    wts = wts / wts.sum()
    b.setflags(write=False)
    wts.setflags(write=False)
    return TriangleRule(barycentric=b, weights=wts, degree=degree)
