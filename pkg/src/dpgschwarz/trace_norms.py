"""Discrete trace norms on the boundary of a square element.

Two kinds of traces live on the four edges of an element of side ``h``:

* ``"uhat"``: continuous, quadratic on each edge. Coefficients are values at
  the edge parameters s = 0, 1/2, 1.
* ``"sighat"``: outward normal flux, linear on each edge and discontinuous at
  the corners. Coefficients are values at s = 0, 1.

Edges are ordered bottom, right, top, left, each parameterized in the
direction of increasing coordinate.

Besides the explicit formulas this module has fine-grid minimization oracles
for the extension norms, and the two constructive lifts (nodal extension of a
scalar trace, minimal-norm Raviart-Thomas lift of a flux trace).
"""
import functools
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .polynomials import gauss, lagrange

KINDS = {"uhat": 3, "sighat": 2}
EDGE_NODES = {"uhat": np.array([0.0, 0.5, 1.0]), "sighat": np.array([0.0, 1.0])}

# (edge, end) pairs that meet at the same corner, for the continuity check
_CORNERS = (((0, 0), (3, 0)), ((0, -1), (1, 0)), ((1, -1), (2, -1)), ((2, 0), (3, -1)))


@dataclass(frozen=True)
class EdgeTraceScalar:
    kind: str
    coeffs: np.ndarray  # (4, 3) or (4, 2)
    h: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trace kind {self.kind!r}")
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (4, KINDS[self.kind]):
            raise ValueError(f"{self.kind} trace needs coefficients of shape (4, {KINDS[self.kind]}), got {c.shape}")
        if self.kind == "uhat":
            for (e1, a1), (e2, a2) in _CORNERS:
                if not np.isclose(c[e1, a1], c[e2, a2], rtol=1e-12, atol=1e-12):
                    raise ValueError("uhat trace is discontinuous at a corner")
        object.__setattr__(self, "coeffs", c)

    def __call__(self, edge, s):
        """Evaluate on local edge ``edge`` at parameters ``s`` in [0, 1]."""
        vals, _ = lagrange(EDGE_NODES[self.kind], s)
        return self.coeffs[edge] @ vals


def uhat_trace(corners, midpoints, h=1.0):
    """Build a uhat trace from corner values (v00, v10, v01, v11) and edge midpoint values."""
    v00, v10, v01, v11 = corners
    mb, mr, mt, ml = midpoints
    coeffs = np.array([[v00, mb, v10], [v10, mr, v11], [v01, mt, v11], [v00, ml, v01]], dtype=float)
    return EdgeTraceScalar("uhat", coeffs, h)


def random_uhat_trace(rng, h=1.0):
    return uhat_trace(rng.standard_normal(4), rng.standard_normal(4), h)


def random_sighat_trace(rng, h=1.0):
    return EdgeTraceScalar("sighat", rng.standard_normal((4, 2)), h)


# ---------------------------------------------------------------------------
# explicit formulas
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _edge_matrices(kind):
    q, w = gauss(4)
    vals, ders = lagrange(EDGE_NODES[kind], q)
    mass = (vals * w) @ vals.T
    stiff = (ders * w) @ ders.T
    integ = vals @ w
    return mass, stiff, integ


def h_half_matrix(h):
    """12x12 matrix of the explicit scalar-trace norm on stacked uhat edge coefficients."""
    mass, stiff, _ = _edge_matrices("uhat")
    # h * (||.||^2_{L2(dK)} + sum_F |.|^2_{H1(F)}); edge length h
    return np.kron(np.eye(4), h * (h * mass + stiff / h))


def h_minus_half_matrix(h, d=2):
    """8x8 matrix of the explicit flux-trace norm on stacked sighat edge coefficients."""
    mass, _, integ = _edge_matrices("sighat")
    w = np.tile(h * integ, 4)
    return np.kron(np.eye(4), h * h * mass) + h ** (-d) * np.outer(w, w)


def h_half_norm_sq(zeta, h=None):
    h = zeta.h if h is None else h
    c = zeta.coeffs.ravel()
    return float(c @ h_half_matrix(h) @ c)


def h_minus_half_norm_sq(zeta, h=None, d=2):
    h = zeta.h if h is None else h
    c = zeta.coeffs.ravel()
    return float(c @ h_minus_half_matrix(h, d) @ c)


def boundary_mean(zeta):
    _, _, integ = _edge_matrices(zeta.kind)
    return float(np.sum(zeta.coeffs @ integ) / 4.0)


# ---------------------------------------------------------------------------
# fine-grid 1D spaces
# ---------------------------------------------------------------------------

class _Space1D:
    """Piecewise Lagrange space of given degree on ``r`` equal cells of [0, length]."""

    def __init__(self, r, length, degree, continuous):
        self.r, self.length, self.degree = r, length, degree
        k = degree + 1
        if continuous:
            self.cell_dofs = np.arange(r)[:, None] * degree + np.arange(k)[None, :]
            self.ndof = r * degree + 1
        else:
            self.cell_dofs = np.arange(r)[:, None] * k + np.arange(k)[None, :]
            self.ndof = r * k
        local = np.linspace(0.0, 1.0, k)
        self.nodes = np.empty(self.ndof)
        self.nodes[self.cell_dofs] = (np.arange(r)[:, None] + local[None, :]) * (length / r)
        self._local_nodes = local

    def cross(self, other, da=0, db=0):
        """Sparse matrix of integrals of (d^da phi_i)(d^db psi_k) over [0, length]."""
        q, w = gauss(max(self.degree, other.degree) + 2)
        dx = self.length / self.r
        va, dva = lagrange(self._local_nodes, q)
        vb, dvb = lagrange(other._local_nodes, q)
        fa = (dva / dx) if da else va
        fb = (dvb / dx) if db else vb
        local = (fa * w * dx) @ fb.T
        rows = np.repeat(self.cell_dofs, other.cell_dofs.shape[1], axis=1).ravel()
        cols = np.tile(other.cell_dofs, (1, self.cell_dofs.shape[1])).ravel()
        vals = np.tile(local.ravel(), self.r)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.ndof, other.ndof))


def _reduced_solver(Q, fixed):
    free = np.flatnonzero(~fixed)
    Q = Q.tocsc()
    Qff = Q[free][:, free].tocsc()
    Qfb = Q[free][:, np.flatnonzero(fixed)]
    lu = spla.splu(Qff)
    return Q, free, Qfb, lu


def _minimize(solver, fixed, boundary_values):
    """Minimize x^T Q x with x[fixed] given (columns of ``boundary_values`` are samples)."""
    Q, free, Qfb, lu = solver
    nb, ns = boundary_values.shape
    x = np.zeros((Q.shape[0], ns))
    x[fixed] = boundary_values
    x[free] = lu.solve(-(Qfb @ boundary_values))
    return np.einsum("is,is->s", x, Q @ x)


@functools.lru_cache(maxsize=16)
def _h1_oracle_system(h, r):
    s1 = _Space1D(r, h, 1, continuous=True)
    M, K = s1.cross(s1), s1.cross(s1, 1, 1)
    Q = sp.kron(K, M) + sp.kron(M, K) + sp.kron(M, M)
    n1 = s1.ndof
    ix, iy = np.divmod(np.arange(n1 * n1), n1)  # dof = ix * n1 + iy
    fixed = (ix == 0) | (ix == n1 - 1) | (iy == 0) | (iy == n1 - 1)
    bx, by = ix[fixed], iy[fixed]
    # boundary node -> (edge, parameter); corners are assigned to the vertical edges
    edge = np.select([bx == 0, bx == n1 - 1, by == 0], [3, 1, 0], default=2)
    param = np.where((edge == 1) | (edge == 3), by, bx) / (n1 - 1)
    return _reduced_solver(Q, fixed), fixed, edge, param


def _eval_on_boundary(traces, edge, param):
    vals, _ = lagrange(EDGE_NODES["uhat"], param)
    out = np.empty((len(edge), len(traces)))
    for col, t in enumerate(traces):
        out[:, col] = np.einsum("ip,ip->p", t.coeffs[edge].T, vals)
    return out


def oracle_h_half(zeta, h=None, refinement=32):
    """Minimal H1(K) norm squared of a bilinear fine-grid extension of a uhat trace.

    ``zeta`` may be a single trace or a list of traces sharing ``h``; the
    system is factored once per (h, refinement).
    """
    single = isinstance(zeta, EdgeTraceScalar)
    traces = [zeta] if single else list(zeta)
    if any(t.kind != "uhat" for t in traces):
        raise ValueError("oracle_h_half needs uhat traces")
    h = traces[0].h if h is None else h
    if refinement < 2:
        raise ValueError("refinement must be at least 2")
    solver, fixed, edge, param = _h1_oracle_system(float(h), int(refinement))
    vals = _minimize(solver, fixed, _eval_on_boundary(traces, edge, param))
    return float(vals[0]) if single else vals


@functools.lru_cache(maxsize=16)
def _hdiv_oracle_system(h, r):
    P = _Space1D(r, h, 2, continuous=True)
    L = _Space1D(r, h, 1, continuous=False)
    Mpp, Dpp, Mll = P.cross(P), P.cross(P, 1, 1), L.cross(L)
    C = P.cross(L, 1, 0)  # int P_i' L_k
    Qaa = sp.kron(Mpp + Dpp, Mll)
    Qbb = sp.kron(Mll, Mpp + Dpp)
    Qab = sp.kron(C, C.T)
    Q = sp.bmat([[Qaa, Qab], [Qab.T, Qbb]]).tocsc()
    nP, nL = P.ndof, L.ndof
    # q_x dof (i, j) -> i * nL + j; q_y dof (k, l) -> offset + k * nP + l
    ai, aj = np.divmod(np.arange(nP * nL), nL)
    bk, bl = np.divmod(np.arange(nL * nP), nP)
    fixed = np.concatenate([(ai == 0) | (ai == nP - 1), (bl == 0) | (bl == nP - 1)])
    # boundary dof -> (edge, reference parameter, sign)
    edge = np.concatenate([np.where(ai == 0, 3, 1), np.where(bl == 0, 0, 2)])
    param = np.concatenate([L.nodes[aj], L.nodes[bk]]) / h
    sign = np.concatenate([np.where(ai == 0, -1.0, 1.0), np.where(bl == 0, -1.0, 1.0)])
    return _reduced_solver(Q, fixed), fixed, edge[fixed], param[fixed], sign[fixed]


def oracle_h_minus_half(zeta, h=None, refinement=32):
    """Minimal H(div; K) norm squared over a fine first-order Raviart-Thomas space.

    The fine normal traces are per-sub-edge linear, so a per-edge linear flux is
    represented exactly and the minimum is a genuine upper bound.
    """
    single = isinstance(zeta, EdgeTraceScalar)
    traces = [zeta] if single else list(zeta)
    if any(t.kind != "sighat" for t in traces):
        raise ValueError("oracle_h_minus_half needs sighat traces")
    h = traces[0].h if h is None else h
    if refinement < 1:
        raise ValueError("refinement must be positive")
    solver, fixed, edge, param, sign = _hdiv_oracle_system(float(h), int(refinement))
    vals, _ = lagrange(EDGE_NODES["sighat"], param)
    bvals = np.empty((len(edge), len(traces)))
    for col, t in enumerate(traces):
        bvals[:, col] = sign * np.einsum("ip,ip->p", t.coeffs[edge].T, vals)
    out = _minimize(solver, fixed, bvals)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# constructive lifts
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _q2_h1_matrix(h):
    nodes = np.array([0.0, 0.5, 1.0])
    q, w = gauss(4)
    v, d = lagrange(nodes, q)
    M = h * (v * w) @ v.T
    K = (d * w) @ d.T / h
    # dof index i + 3 j (x-factor i, y-factor j)
    return np.kron(M, K) + np.kron(K, M) + np.kron(M, M)


def nodal_extension(zeta):
    """Biquadratic extension of a uhat trace with the interior node set to the boundary mean.

    Returns ``(coeffs, h1_norm_sq)``; ``coeffs`` is (3, 3) indexed ``[j, i]``
    (y-node, x-node).
    """
    if zeta.kind != "uhat":
        raise ValueError("nodal_extension needs a uhat trace")
    c = zeta.coeffs
    ext = np.empty((3, 3))
    ext[0, :] = c[0]        # bottom
    ext[2, :] = c[2]        # top
    ext[:, 0] = c[3]        # left
    ext[:, 2] = c[1]        # right
    ext[1, 1] = boundary_mean(zeta)
    v = ext.ravel()  # index 3 j + i
    return ext, float(v @ _q2_h1_matrix(zeta.h) @ v)


@dataclass(frozen=True)
class RTLift:
    """Flux in the tensor Raviart-Thomas space Q_{2,1} x Q_{1,2} on [0, h]^2.

    ``qx[i, j]``: x-component at x-node i (0, h/2, h) and y-node j (0, h);
    ``qy[k, l]``: y-component at x-node k (0, h) and y-node l (0, h/2, h).
    """

    qx: np.ndarray
    qy: np.ndarray
    h: float

    def as_vector(self):
        return np.concatenate([self.qx.ravel(), self.qy.ravel()])

    def l2_norm_sq(self):
        c = self.as_vector()
        return float(c @ _rt_mass(self.h) @ c)

    def divergence(self, x, y):
        x, y = np.atleast_1d(x) / self.h, np.atleast_1d(y) / self.h
        vq, dq = lagrange([0.0, 0.5, 1.0], x)
        vl, _ = lagrange([0.0, 1.0], y)
        part_x = np.einsum("ij,ip,jp->p", self.qx, dq, vl)
        vl, _ = lagrange([0.0, 1.0], x)
        vq, dq = lagrange([0.0, 0.5, 1.0], y)
        part_y = np.einsum("kl,kp,lp->p", self.qy, vl, dq)
        return (part_x + part_y) / self.h

    def normal_trace(self):
        """(4, 2) outward normal flux at edge parameters s = 0, 1."""
        return np.array([-self.qy[:, 0], self.qx[2, :], self.qy[:, 2], -self.qx[0, :]])

    def hdiv_norm_sq(self):
        div = self.divergence(np.array([0.0]), np.array([0.0]))[0]
        return self.l2_norm_sq() + div * div * self.h * self.h


@functools.lru_cache(maxsize=None)
def _rt_mass(h):
    q, w = gauss(4)
    vq, _ = lagrange([0.0, 0.5, 1.0], q)
    vl, _ = lagrange([0.0, 1.0], q)
    Mq = h * (vq * w) @ vq.T
    Ml = h * (vl * w) @ vl.T
    return sla.block_diag(np.kron(Mq, Ml), np.kron(Ml, Mq))


def _rt_constraints(h):
    """Rows mapping the 12 RT coefficients to (normal trace (8), div differences (3))."""
    rows = []
    for k in range(12):
        c = np.zeros(12)
        c[k] = 1.0
        lift = RTLift(c[:6].reshape(3, 2), c[6:].reshape(2, 3), h)
        corners = lift.divergence(np.array([0.0, h, 0.0, h]), np.array([0.0, 0.0, h, h]))
        rows.append(np.concatenate([lift.normal_trace().ravel(), corners[1:] - corners[0]]))
    return np.array(rows).T


def minimal_rt_lift(zeta, tol=1e-10):
    """Minimal-L2 flux with normal trace ``zeta`` and constant divergence."""
    if zeta.kind != "sighat":
        raise ValueError("minimal_rt_lift needs a sighat trace")
    h = zeta.h
    E = _rt_constraints(h)
    g = np.concatenate([zeta.coeffs.ravel(), np.zeros(3)])
    c_p, *_ = np.linalg.lstsq(E, g, rcond=None)
    if np.linalg.norm(E @ c_p - g) > tol * max(1.0, np.linalg.norm(g)):
        raise ArithmeticError("RT lift constraints are infeasible: basis and normal trace disagree")
    N = sla.null_space(E)
    M = _rt_mass(h)
    if N.shape[1]:
        z = np.linalg.solve(N.T @ M @ N, -(N.T @ M @ c_p))
        c = c_p + N @ z
    else:
        c = c_p
    return RTLift(c[:6].reshape(3, 2), c[6:].reshape(2, 3), h)


# ---------------------------------------------------------------------------
# equivalence sweeps
# ---------------------------------------------------------------------------

def equivalence_sweep(kind, hs=(1.0, 0.25, 0.0625), samples=200, seed=0, refinement=32):
    """Ratios formula / oracle over random traces for each element size.

    Returns one dict per h with keys norm_kind, h, min_ratio, max_ratio, samples.
    The same reference-shaped samples are used at every h.
    """
    rows = []
    for h in hs:
        rng = np.random.default_rng(seed)
        if kind == "h_half":
            traces = [random_uhat_trace(rng, h) for _ in range(samples)]
            formula = np.array([h_half_norm_sq(t) for t in traces])
            oracle = oracle_h_half(traces, h, refinement)
        elif kind == "h_minus_half":
            traces = [random_sighat_trace(rng, h) for _ in range(samples)]
            formula = np.array([h_minus_half_norm_sq(t) for t in traces])
            oracle = oracle_h_minus_half(traces, h, refinement)
        else:
            raise ValueError(f"unknown norm kind {kind!r}")
        ratio = formula / oracle
        rows.append(dict(norm_kind=kind, h=float(h), min_ratio=float(ratio.min()),
                         max_ratio=float(ratio.max()), samples=int(samples)))
    return rows
