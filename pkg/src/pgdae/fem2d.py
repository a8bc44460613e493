"""P1 finite elements on the unit square and the Cahn-Hilliard model.

The mesh is a uniform triangulation of ``(0, 1)^2``: ``N x N`` cells, each
split along the lower-left to upper-right diagonal, nodes numbered
row-major.  Element mass and stiffness integrals are exact closed forms;
the double-well terms ``W(v) = (v^2 - 1)^2 / 4`` use the degree-4 symmetric
triangle rule, which integrates them exactly for P1 fields.  That exactness
is what keeps the assembled gradient consistent with the assembled energy,
and hence the discrete energy balance of the time stepper tight.

The Cahn-Hilliard system in phase fraction ``v`` and chemical potential
``w`` with Neumann data ``grad w . nu = u1``, ``grad v . nu = u2``:

    dv/dt - sigma Laplace(w) = 0
    -eps Laplace(v) + W'(v) / eps = w

becomes an energy-based model with ``z1 = v`` coefficients, no z2 block,
and ``z3 = w`` coefficients: the energy is
``H(v) = int eps/2 |grad v|^2 + W(v)/eps``, the skew block couples the two
fields through the mass matrix, and dissipation is ``sigma`` times the
stiffness form in ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatchError, OutOfRangeError
from .linalg import assemble_csr
from .model import EnergyModel, LinearBlockOperators, from_linear_blocks
from .polybasis import triangle_rule
from .timestepper import ManufacturedProblem


@dataclass
class Mesh2D:
    """Uniform triangulation of the unit square."""

    N: int
    nodes: np.ndarray          # (n_nodes, 2)
    triangles: np.ndarray      # (2 N^2, 3), positively oriented
    boundary_edges: np.ndarray  # (4 N, 2) node pairs, each boundary edge once
    boundary_nodes: np.ndarray  # (4 N,) sorted unique boundary node ids

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_mesh(N: int) -> Mesh2D:
    """Uniform mesh with ``(N+1)^2`` nodes and ``2 N^2`` triangles."""
    if N < 1:
        raise OutOfRangeError(f"need at least one subdivision, got {N}")
    xs = np.arange(N + 1) / N
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(ix, iy):
        return iy * (N + 1) + ix

    tris = []
    for iy in range(N):
        for ix in range(N):
            ll, lr = nid(ix, iy), nid(ix + 1, iy)
            ul, ur = nid(ix, iy + 1), nid(ix + 1, iy + 1)
            tris.append((ll, lr, ur))   # lower triangle
            tris.append((ll, ur, ul))   # upper triangle
    edges = []
    for i in range(N):
        edges.append((nid(i, 0), nid(i + 1, 0)))          # bottom
        edges.append((nid(N, i), nid(N, i + 1)))          # right
        edges.append((nid(i + 1, N), nid(i, N)))          # top
        edges.append((nid(0, i + 1), nid(0, i)))          # left
    edges = np.array(edges, dtype=int)
    bnodes = np.unique(edges.ravel())
    return Mesh2D(
        N=N,
        nodes=nodes,
        triangles=np.array(tris, dtype=int),
        boundary_edges=edges,
        boundary_nodes=bnodes,
    )


@dataclass
class FemMatrices:
    """Assembled P1 matrices: mass, stiffness, and boundary mass.

    ``Bb`` maps nodal traces on the boundary (ordered like
    ``boundary_nodes``) to interior load vectors.
    """

    M: sp.csr_matrix
    K: sp.csr_matrix
    Bb: sp.csr_matrix
    boundary_nodes: np.ndarray


def assemble_matrices(mesh: Mesh2D) -> FemMatrices:
    """Exact element integrals for mass, stiffness, and boundary mass."""
    n = mesh.n_nodes
    tris = mesh.triangles
    p = mesh.nodes[tris]
    areas = mesh.areas()

    # Element mass: area / 12 * (1 + delta_ij).
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    m_data = areas[:, None, None] * base

    # Element stiffness from the constant barycentric gradients.
    b = np.stack(
        [p[:, 1, 1] - p[:, 2, 1], p[:, 2, 1] - p[:, 0, 1], p[:, 0, 1] - p[:, 1, 1]], axis=1
    )
    c = np.stack(
        [p[:, 2, 0] - p[:, 1, 0], p[:, 0, 0] - p[:, 2, 0], p[:, 1, 0] - p[:, 0, 0]], axis=1
    )
    k_data = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (
        4.0 * areas[:, None, None]
    )

    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    M = assemble_csr(rows, cols, m_data.ravel(), (n, n))
    K = assemble_csr(rows, cols, k_data.ravel(), (n, n))

    # Edge-wise 1-D P1 mass for the Neumann traces.
    bidx = {node: i for i, node in enumerate(mesh.boundary_nodes)}
    er, ec, ev = [], [], []
    for a, bnode in mesh.boundary_edges:
        length = float(np.linalg.norm(mesh.nodes[a] - mesh.nodes[bnode]))
        for gi in (a, bnode):
            for gj in (a, bnode):
                er.append(gi)
                ec.append(bidx[gj])
                ev.append(length / (3.0 if gi == gj else 6.0))
    Bb = assemble_csr(np.array(er), np.array(ec), np.array(ev), (n, mesh.boundary_nodes.size))
    return FemMatrices(M=M, K=K, Bb=Bb, boundary_nodes=mesh.boundary_nodes)


def double_well(v):
    return 0.25 * (v * v - 1.0) ** 2


def double_well_prime(v):
    return v * (v * v - 1.0)


def double_well_second(v):
    return 3.0 * v * v - 1.0


@dataclass
class CahnHilliardParams:
    """Interaction length, mobility, and the energy potential."""

    eps: float = 0.1
    sigma: float = 1.0
    W: Callable = field(default=double_well)
    W_prime: Callable = field(default=double_well_prime)
    W_second: Callable = field(default=double_well_second)

    def __post_init__(self):
        if self.eps <= 0:
            raise OutOfRangeError("interaction length eps must be positive")
        if self.sigma < 0:
            raise OutOfRangeError("mobility sigma must be nonnegative")


def build_cahn_hilliard(mesh: Mesh2D, params: CahnHilliardParams | None = None,
                        u1: Callable | None = None, u2: Callable | None = None) -> EnergyModel:
    """Assemble the Cahn-Hilliard equations as an :class:`EnergyModel`.

    ``u1``/``u2`` are optional Neumann data (callables of time returning
    nodal traces on ``boundary_nodes``); when given they become the model's
    default input signal for the time stepper.  Homogeneous data is the
    default.
    """
    params = params or CahnHilliardParams()
    fem = assemble_matrices(mesh)
    n = mesh.n_nodes
    eps, sigma = params.eps, params.sigma

    rule = triangle_rule(4)
    lam = rule.barycentric            # (6, 3)
    wq = rule.weights
    tris = mesh.triangles
    areas = mesh.areas()
    hess_rows = np.repeat(tris, 3, axis=1).ravel()
    hess_cols = np.tile(tris, (1, 3)).ravel()
    lam_outer = np.einsum("q,qi,qj->qij", wq, lam, lam)

    def node_values(c):
        return c[tris] @ lam.T        # (n_tri, 6)

    def hamiltonian(c1, c2):
        vq = node_values(c1)
        well = float(areas @ (params.W(vq) @ wq))
        return 0.5 * eps * float(c1 @ (fem.K @ c1)) + well / eps

    def grad1(c1, c2):
        vq = node_values(c1)
        contrib = areas[:, None] * ((wq[None, :] * params.W_prime(vq)) @ lam)
        fw = np.bincount(tris.ravel(), weights=contrib.ravel(), minlength=n)
        return eps * (fem.K @ c1) + fw / eps

    def grad2(c1, c2):
        return np.zeros(0)

    def hess(c1, c2):
        vq = node_values(c1)
        data = np.einsum("tq,qij->tij", areas[:, None] * params.W_second(vq), lam_outer)
        HW = assemble_csr(hess_rows, hess_cols, data.ravel(), (n, n))
        return eps * fem.K + HW / eps

    Z = sp.csr_matrix((n, n))
    Jbar = sp.bmat([[None, fem.M], [-fem.M, None]], format="csr")
    Rbar = sp.bmat([[Z, None], [None, sigma * fem.K]], format="csr")
    nb = fem.boundary_nodes.size
    Bbar = sp.bmat([[None, eps * fem.Bb], [sigma * fem.Bb, None]], format="csr")

    default_u = None
    if u1 is not None or u2 is not None:
        zero = np.zeros(nb)
        g1 = u1 if u1 is not None else (lambda t: zero)
        g2 = u2 if u2 is not None else (lambda t: zero)

        def default_u(t):
            return np.concatenate([np.asarray(g1(t), dtype=float),
                                   np.asarray(g2(t), dtype=float)])

    ops = LinearBlockOperators(n1=n, n2=0, n3=n, Jbar=Jbar, Rbar=Rbar, Bbar=Bbar)
    model = from_linear_blocks(
        ops, hamiltonian, grad1, grad2, hess=hess, default_u=default_u, name="cahn-hilliard"
    )
    model.mesh = mesh
    model.fem = fem
    model.params = params
    return model


def make_consistent_initial(model: EnergyModel, c1, u_at0=None):
    """Complete ``c1`` with the chemical potential from the algebraic row.

    Solves the block-1 equations at the initial time for ``c3``:
    ``(J - R)_{13} c3 = grad_1 H(c1) - (B u)_1``.  Works for any model of
    Cahn-Hilliard type (no z2 block, row 1 free of time derivatives) with a
    square invertible coupling block, including its reduced-order variants.
    """
    c1 = np.asarray(c1, dtype=float)
    if c1.shape[0] != model.n1:
        raise DimensionMismatchError(f"c1 has length {c1.shape[0]}, expected {model.n1}")
    M13 = (model.J_mat - model.R_mat)[: model.n1, model.n1 + model.n2:]
    rhs = model.grad1(c1, np.zeros(0))
    if u_at0 is not None:
        rhs = rhs - model.source(u_at0, 0.0)[: model.n1]
    if M13.shape[0] != M13.shape[1]:
        raise DimensionMismatchError("block-1/block-3 coupling is not square")
    if sp.issparse(M13):
        c3 = spla.spsolve(M13.tocsc(), rhs)
    else:
        c3 = np.linalg.solve(M13, rhs)
    return c1, c3


def fractal_noise_initial(mesh: Mesh2D, seed: int, octaves: int = 3,
                          amplitude: float = 0.1) -> np.ndarray:
    """Seeded multi-octave value noise sampled at the mesh nodes.

    Octave ``o`` contributes ``2^-o`` times a bilinear interpolation of a
    uniform random lattice at frequency ``2^o``; the sum is affinely
    rescaled to ``[-amplitude, amplitude]``.  Nodal sampling realizes the
    projection onto the P1 space.  Deterministic in ``seed``.
    """
    if octaves < 1:
        raise OutOfRangeError("need at least one octave")
    rng = np.random.default_rng(seed)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    total = np.zeros(mesh.n_nodes)
    for o in range(octaves):
        freq = 2 ** o
        lattice = rng.uniform(-1.0, 1.0, size=(freq + 1, freq + 1))
        fx = np.clip(x * freq, 0, freq)
        fy = np.clip(y * freq, 0, freq)
        ix = np.minimum(fx.astype(int), freq - 1)
        iy = np.minimum(fy.astype(int), freq - 1)
        sx, sy = fx - ix, fy - iy
        vals = (
            lattice[ix, iy] * (1 - sx) * (1 - sy)
            + lattice[ix + 1, iy] * sx * (1 - sy)
            + lattice[ix, iy + 1] * (1 - sx) * sy
            + lattice[ix + 1, iy + 1] * sx * sy
        )
        total += vals / freq if o else vals
    lo, hi = total.min(), total.max()
    if hi == lo or amplitude == 0.0:
        return np.zeros(mesh.n_nodes)
    return amplitude * (2.0 * (total - lo) / (hi - lo) - 1.0)


def manufactured_field(t: float, x, y):
    """Smooth pulse used for temporal convergence studies."""
    r2 = (x - 0.5) ** 2 + (y - 0.5) ** 2
    return (np.sin(t) / 10.0 + 1.0) * (2.0 * np.exp(-25.0 * r2) - 1.0)


def manufactured_field_dt(t: float, x, y):
    r2 = (x - 0.5) ** 2 + (y - 0.5) ** 2
    return (np.cos(t) / 10.0) * (2.0 * np.exp(-25.0 * r2) - 1.0)


def manufactured_problem(mesh: Mesh2D, params: CahnHilliardParams | None = None) -> ManufacturedProblem:
    """Forced Cahn-Hilliard problem whose exact solution is known.

    The phase field is prescribed by interpolating the smooth pulse onto
    the nodes; the potential follows from the algebraic row, so the pair
    solves the spatially discrete system once the dynamic row receives the
    matching forcing.  Errors measured against this reference isolate the
    temporal discretization.
    """
    params = params or CahnHilliardParams()
    model = build_cahn_hilliard(mesh, params)
    fem = model.fem
    M_lu = spla.splu(fem.M.tocsc())
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    sigma = params.sigma
    none2 = np.zeros(0)

    def c1_of(t):
        return manufactured_field(t, x, y)

    def c3_of(t):
        return M_lu.solve(model.grad1(c1_of(t), none2))

    def reference(t):
        return c1_of(t), none2, c3_of(t)

    def forcing(t):
        c1 = c1_of(t)
        c3 = c3_of(t)
        c1dot = manufactured_field_dt(t, x, y)
        g1 = model.grad1(c1, none2) - fem.M @ c3
        g3 = fem.M @ c1dot + sigma * (fem.K @ c3)
        return np.concatenate([g1, g3])

    return ManufacturedProblem(
        model=model,
        reference=reference,
        forcing=forcing,
        initial=reference(0.0),
        u=None,
        label="cahn-hilliard-manufactured",
    )


def write_field_csv(mesh: Mesh2D, values, path):
    """Write nodal values as ``(x, y, value)`` rows."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != mesh.n_nodes:
        raise DimensionMismatchError("field length does not match the mesh")
    with open(path, "w", newline="\n") as fh:
        fh.write("x,y,value\n")
        for (xx, yy), v in zip(mesh.nodes, values):
            fh.write(f"{xx:.17g},{yy:.17g},{v:.17g}\n")
