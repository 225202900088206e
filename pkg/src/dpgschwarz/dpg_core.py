"""DPG discretization of -div grad u = f on the unit square with u = 0 on the boundary.

Ultraweak unknowns per element: sigma = -grad u (2 x Q1), u (Q1), the scalar
trace uhat (continuous, quadratic per edge, zero on the boundary) and the flux
trace sighat (linear per edge, one global orientation per edge). Test
functions are bicubic for both the vector and the scalar part, and the
optimal test functions come from a per-element Gram solve.

Local trial ordering (32): sigma_x (4), sigma_y (4), u (4), uhat (4 edges x
{s=0, s=1/2, s=1}), sighat (4 edges x {s=0, s=1}). Local test ordering (48):
tau_x (16), tau_y (16), v (16).
"""
import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .mesh import LOCAL_EDGE_NORMALS
from .polynomials import equispaced, gauss, lagrange, tensor_basis, tensor_eval
from .trace_norms import h_half_matrix, h_minus_half_matrix

TRIAL_DEGREE = 1
TEST_DEGREE = 3
N_TRIAL = 32
N_TEST = 48
MATRIX_QUAD = 4
LOAD_QUAD = 6

SIGMA = slice(0, 8)
U = slice(8, 12)
UHAT = slice(12, 24)
SIGHAT = slice(24, 32)
UHAT_NODES = np.array([0.0, 0.5, 1.0])
SIGHAT_NODES = np.array([0.0, 1.0])


def _edge_points(le, s):
    """Reference coordinates of parameter(s) ``s`` on local edge ``le``."""
    s = np.asarray(s, dtype=float)
    zero, one = np.zeros_like(s), np.ones_like(s)
    return np.column_stack([(s, one, s, zero)[le], (zero, s, one, s)[le]])


@dataclass(frozen=True)
class BasisDescription:
    """Shape functions tabulated at a tensor Gauss grid on the reference square."""

    degree: int
    values: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    weights: np.ndarray
    points: np.ndarray

    @property
    def dim(self):
        return self.values.shape[0]


def reference_test_basis(npts=MATRIX_QUAD):
    """Bicubic Lagrange basis; the 48 test functions are three copies (tau_x, tau_y, v)."""
    return BasisDescription(TEST_DEGREE, *tensor_basis(TEST_DEGREE, npts))


def reference_trial_basis(npts=MATRIX_QUAD):
    """Bilinear basis for sigma and u; trace bases are per-edge Lagrange (see module doc)."""
    return BasisDescription(TRIAL_DEGREE, *tensor_basis(TRIAL_DEGREE, npts))


@dataclass(frozen=True, eq=False)
class DofMap:
    n: int
    offsets: dict                # component -> first global index
    counts: dict                 # component -> number of global dofs
    l2g: np.ndarray              # (nel, 32), -1 for eliminated boundary uhat dofs
    signs: np.ndarray            # (nel, 32)
    node_vertices: np.ndarray    # (N, 2) vertex pair whose midpoint is the dof's node
    vertex_dof: np.ndarray       # (nv,) uhat vertex dof or -1
    edge_dof: np.ndarray         # (ne,) uhat midpoint dof or -1

    @property
    def N(self):
        return sum(self.counts.values())

    def component_slice(self, name):
        return slice(self.offsets[name], self.offsets[name] + self.counts[name])

    def local_coefficients(self, x):
        """Signed local coefficients (nel, 32) of a global vector; eliminated dofs read as 0."""
        x = np.asarray(x, dtype=float)
        padded = np.append(x, 0.0)
        return padded[self.l2g] * self.signs


def build_dofmap(mesh):
    n = mesh.n
    nel, nv, ne = mesh.num_elements, mesh.num_vertices, mesh.num_edges
    counts = {
        "sigma": 8 * nel,
        "u": 4 * nel,
        "uhat_vertex": (n - 1) ** 2,
        "uhat_edge": 2 * n * (n - 1),
        "sighat": 2 * ne,
    }
    offsets, start = {}, 0
    for name, c in counts.items():
        offsets[name] = start
        start += c
    N = start

    vertex_dof = -np.ones(nv, dtype=np.int64)
    interior_v = np.flatnonzero(~mesh.boundary_vertices())
    vertex_dof[interior_v] = offsets["uhat_vertex"] + np.arange(len(interior_v))
    edge_dof = -np.ones(ne, dtype=np.int64)
    interior_e = np.flatnonzero(~mesh.boundary_edges())
    edge_dof[interior_e] = offsets["uhat_edge"] + np.arange(len(interior_e))

    e = np.arange(nel)
    l2g = np.empty((nel, N_TRIAL), dtype=np.int64)
    l2g[:, 0:8] = offsets["sigma"] + 8 * e[:, None] + np.arange(8)
    l2g[:, 8:12] = offsets["u"] + 4 * e[:, None] + np.arange(4)
    signs = np.ones((nel, N_TRIAL))
    for le in range(4):
        g = mesh.element_edges[:, le]
        a, b = mesh.edges[g, 0], mesh.edges[g, 1]
        l2g[:, 12 + 3 * le] = vertex_dof[a]
        l2g[:, 13 + 3 * le] = edge_dof[g]
        l2g[:, 14 + 3 * le] = vertex_dof[b]
        l2g[:, 24 + 2 * le] = offsets["sighat"] + 2 * g
        l2g[:, 25 + 2 * le] = offsets["sighat"] + 2 * g + 1
        signs[:, 24 + 2 * le: 26 + 2 * le] = mesh.element_edge_signs[:, le:le + 1]

    node_vertices = np.empty((N, 2), dtype=np.int64)
    corners = np.repeat(mesh.elements, 1, axis=0)
    node_vertices[offsets["sigma"]:offsets["u"]] = np.tile(corners, (1, 2)).reshape(-1, 1)
    node_vertices[offsets["u"]:offsets["uhat_vertex"]] = corners.reshape(-1, 1)
    node_vertices[vertex_dof[interior_v]] = interior_v[:, None]
    node_vertices[edge_dof[interior_e]] = mesh.edges[interior_e]
    sh = offsets["sighat"] + np.arange(2 * ne)
    node_vertices[sh] = mesh.edges.reshape(-1)[:, None]
    for arr in (l2g, signs, node_vertices, vertex_dof, edge_dof):
        arr.setflags(write=False)
    return DofMap(n, offsets, counts, l2g, signs, node_vertices, vertex_dof, edge_dof)


# ---------------------------------------------------------------------------
# element matrices
# ---------------------------------------------------------------------------

def _check_h(h):
    if not h > 0:
        raise ValueError(f"degenerate element with side {h}")


def local_gram(h):
    """Gram matrix of the test inner product (tau, div tau, v, grad v) on a square of side ``h``."""
    _check_h(h)
    tb = reference_test_basis()
    w = tb.weights * h * h
    V, Dx, Dy = tb.values, tb.dx / h, tb.dy / h
    M = (V * w) @ V.T
    Sxx, Sxy, Syy = (Dx * w) @ Dx.T, (Dx * w) @ Dy.T, (Dy * w) @ Dy.T
    G = np.zeros((N_TEST, N_TEST))
    G[:16, :16] = M + Sxx
    G[:16, 16:32] = Sxy
    G[16:32, :16] = Sxy.T
    G[16:32, 16:32] = M + Syy
    G[32:, 32:] = M + Sxx + Syy
    return G


def local_b(h):
    """48x32 matrix of b(trial_j, test_i); sighat columns use the element's outward normal."""
    _check_h(h)
    tb = reference_test_basis()
    trb = reference_trial_basis()
    w = tb.weights * h * h
    V3, Dx3, Dy3 = tb.values, tb.dx / h, tb.dy / h
    V1 = trb.values
    B = np.zeros((N_TEST, N_TRIAL))
    mass31 = (V3 * w) @ V1.T
    B[:16, 0:4] = mass31                   # int sigma . tau
    B[16:32, 4:8] = mass31
    B[:16, U] = -(Dx3 * w) @ V1.T          # -int u div tau
    B[16:32, U] = -(Dy3 * w) @ V1.T
    B[32:, 0:4] = -(Dx3 * w) @ V1.T        # -int sigma . grad v
    B[32:, 4:8] = -(Dy3 * w) @ V1.T

    q, qw = gauss(MATRIX_QUAD)
    ds = qw * h
    lu, _ = lagrange(UHAT_NODES, q)
    ls, _ = lagrange(SIGHAT_NODES, q)
    for le in range(4):
        psi, _, _ = tensor_eval(TEST_DEGREE, _edge_points(le, q))
        nx, ny = LOCAL_EDGE_NORMALS[le]
        cols_u = slice(12 + 3 * le, 15 + 3 * le)
        edge_u = (psi * ds) @ lu.T                   # int_e psi_k l_a ds
        B[:16, cols_u] += nx * edge_u                # int uhat tau . n
        B[16:32, cols_u] += ny * edge_u
        B[32:, 24 + 2 * le: 26 + 2 * le] += (psi * ds) @ ls.T  # int v sighat
    return B


@dataclass(frozen=True, eq=False)
class LocalDPG:
    h: float
    G: np.ndarray
    B: np.ndarray
    A_local: np.ndarray
    T: np.ndarray          # G^{-1} B: test-space images of the local trial functions
    factor: tuple = field(repr=False)

    def load(self, ell_v):
        """Local right-hand sides T^T ell for v-part load vectors ``ell_v`` (..., 16)."""
        return ell_v @ self.T[32:, :]


def local_stiffness(G, B):
    """``(B^T G^{-1} B, cho_factor(G))`` with the product symmetrized."""
    try:
        factor = sla.cho_factor(G)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("test Gram matrix is not SPD: quadrature or geometry bug") from exc
    A = B.T @ sla.cho_solve(factor, B)
    return 0.5 * (A + A.T), factor


@functools.lru_cache(maxsize=32)
def local_dpg(h):
    G = local_gram(h)
    B = local_b(h)
    A, factor = local_stiffness(G, B)
    T = sla.cho_solve(factor, B)
    for arr in (G, B, A, T):
        arr.setflags(write=False)
    return LocalDPG(h, G, B, A, T, factor)


# ---------------------------------------------------------------------------
# global system
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AssembledSystem:
    mesh: object
    dofmap: DofMap
    A: sp.csr_matrix
    rhs: np.ndarray
    local: LocalDPG

    @property
    def N(self):
        return self.A.shape[0]

    def solve(self):
        """Direct sparse solve of A x = rhs."""
        return spla.spsolve(self.A.tocsc(), self.rhs)

    def energy(self, x):
        return float(x @ (self.A @ x))

    def export_matrix_market(self, path):
        """Write A in Matrix Market coordinate format (symmetric, 1-based)."""
        scipy.io.mmwrite(str(path), sp.coo_matrix(self.A), symmetry="symmetric",
                         comment="DPG Poisson operator, n=%d" % self.mesh.n)


def element_load(mesh, f, npts=LOAD_QUAD):
    """(nel, 16) integrals of f against the bicubic test functions v."""
    h = mesh.h
    V, _, _, w, pts = tensor_basis(TEST_DEGREE, npts)
    origins = mesh.element_origin(np.arange(mesh.num_elements))
    X = origins[:, 0:1] + h * pts[None, :, 0]
    Y = origins[:, 1:2] + h * pts[None, :, 1]
    fv = np.broadcast_to(np.asarray(f(X, Y), dtype=float), X.shape)
    return (fv * (w * h * h)) @ V.T


def assemble(mesh, dofmap=None, f=None):
    """Global DPG operator and load; ``f(x, y)`` is vectorized, ``None`` means f = 0."""
    if dofmap is None:
        dofmap = build_dofmap(mesh)
    if dofmap.n != mesh.n:
        raise ValueError("dofmap does not belong to this mesh")
    local = local_dpg(mesh.h)
    N = dofmap.N
    if dofmap.l2g.max() >= N:
        raise IndexError("dofmap references indices beyond the system size")
    rows, cols, vals = kernels.scatter_triplets(dofmap.l2g, dofmap.signs, local.A_local)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    if f is None:
        rhs = np.zeros(N)
    else:
        rhs = kernels.scatter_vector(dofmap.l2g, dofmap.signs, local.load(element_load(mesh, f)), N)
    return AssembledSystem(mesh, dofmap, A, rhs, local)


# ---------------------------------------------------------------------------
# post-processing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyComponents:
    sigma_l2_sq: float
    u_l2_sq: float
    uhat_half_sq: float
    sighat_minus_half_sq: float
    energy: float

    @property
    def norm_sum(self):
        return self.sigma_l2_sq + self.u_l2_sq + self.uhat_half_sq + self.sighat_minus_half_sq


@functools.lru_cache(maxsize=None)
def _q1_mass(h):
    v, _ = lagrange(equispaced(1), gauss(2)[0])
    m1 = h * (v * gauss(2)[1]) @ v.T
    return np.kron(m1, m1)


def energy_norm_components(system, coeffs):
    """Field L2 norms, broken trace norms and a_h(U, U) of a global coefficient vector."""
    x = np.asarray(coeffs, dtype=float)
    if x.shape != (system.N,):
        raise ValueError(f"expected {system.N} coefficients, got {x.shape}")
    h = system.mesh.h
    c = system.dofmap.local_coefficients(x)
    M = _q1_mass(h)
    sig = np.einsum("ea,ab,eb->", c[:, 0:4], M, c[:, 0:4]) + np.einsum("ea,ab,eb->", c[:, 4:8], M, c[:, 4:8])
    u = np.einsum("ea,ab,eb->", c[:, U], M, c[:, U])
    uh = np.einsum("ea,ab,eb->", c[:, UHAT], h_half_matrix(h), c[:, UHAT])
    sh = np.einsum("ea,ab,eb->", c[:, SIGHAT], h_minus_half_matrix(h), c[:, SIGHAT])
    return EnergyComponents(float(sig), float(u), float(uh), float(sh), system.energy(x))


def norm_matrix(system):
    """Sparse Gram matrix of the component-norm sum used by :func:`energy_norm_components`."""
    h = system.mesh.h
    M = _q1_mass(h)
    L = np.zeros((N_TRIAL, N_TRIAL))
    L[0:4, 0:4] = L[4:8, 4:8] = L[U, U] = M
    L[UHAT, UHAT] = h_half_matrix(h)
    L[SIGHAT, SIGHAT] = h_minus_half_matrix(h)
    dm = system.dofmap
    rows, cols, vals = kernels.scatter_triplets(dm.l2g, dm.signs, L)
    return sp.csr_matrix((vals, (rows, cols)), shape=(dm.N, dm.N))


def equivalence_bounds(system):
    """Extreme generalized eigenvalues of (A, norm_matrix): the sharp equivalence constants.

    Dense, so only meant for small meshes.
    """
    ev = sla.eigh(system.A.toarray(), norm_matrix(system).toarray(), eigvals_only=True)
    return float(ev[0]), float(ev[-1])


def l2_errors(system, coeffs, u_exact, sigma_exact=None, npts=LOAD_QUAD):
    """L2(Omega) errors of the u (and optionally sigma) components."""
    mesh = system.mesh
    h = mesh.h
    c = system.dofmap.local_coefficients(coeffs)
    V, _, _, w, pts = tensor_basis(TRIAL_DEGREE, npts)
    origins = mesh.element_origin(np.arange(mesh.num_elements))
    X = origins[:, 0:1] + h * pts[None, :, 0]
    Y = origins[:, 1:2] + h * pts[None, :, 1]
    wq = w * h * h
    err_u = np.sqrt(np.sum(((c[:, U] @ V) - u_exact(X, Y)) ** 2 * wq))
    if sigma_exact is None:
        return float(err_u)
    sx, sy = sigma_exact(X, Y)
    err_s = np.sqrt(np.sum(((c[:, 0:4] @ V) - sx) ** 2 * wq + ((c[:, 4:8] @ V) - sy) ** 2 * wq))
    return float(err_u), float(err_s)


def interpolate(system, u, sigma):
    """Nodal interpolant of (sigma, u, u|_skeleton, sigma . n_global) in the trial space.

    ``u(x, y)`` and ``sigma(x, y) -> (sx, sy)`` are vectorized callables. Boundary
    uhat values are dropped (they are not unknowns).
    """
    mesh, dm = system.mesh, system.dofmap
    x = np.zeros(dm.N)
    P = mesh.vertices[mesh.elements]  # (nel, 4, 2)
    sx, sy = sigma(P[..., 0], P[..., 1])
    x[dm.component_slice("sigma")] = np.concatenate([sx, sy], axis=1).ravel()
    x[dm.component_slice("u")] = u(P[..., 0], P[..., 1]).ravel()
    iv = np.flatnonzero(dm.vertex_dof >= 0)
    x[dm.vertex_dof[iv]] = u(mesh.vertices[iv, 0], mesh.vertices[iv, 1])
    ie = np.flatnonzero(dm.edge_dof >= 0)
    mid = mesh.vertices[mesh.edges[ie]].mean(axis=1)
    x[dm.edge_dof[ie]] = u(mid[:, 0], mid[:, 1])
    ends = mesh.vertices[mesh.edges.reshape(-1)]
    ex, ey = sigma(ends[:, 0], ends[:, 1])
    normals = np.repeat(mesh.edge_normals, 2, axis=0)
    x[dm.component_slice("sighat")] = ex * normals[:, 0] + ey * normals[:, 1]
    return x


def manufactured_problem():
    """Exact solution sin(pi x) sin(pi y), its flux -grad u, and f = -lap u."""
    pi = np.pi

    def u(x, y):
        return np.sin(pi * x) * np.sin(pi * y)

    def sigma(x, y):
        return -pi * np.cos(pi * x) * np.sin(pi * y), -pi * np.sin(pi * x) * np.cos(pi * y)

    def f(x, y):
        return 2 * pi * pi * np.sin(pi * x) * np.sin(pi * y)

    return u, sigma, f
