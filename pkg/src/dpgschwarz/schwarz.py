"""One-level additive Schwarz preconditioner and preconditioned conjugate gradients."""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_LOCAL_LIMIT = 600


class ConfigurationError(ValueError):
    pass


class SubdomainFactorizationError(np.linalg.LinAlgError):
    def __init__(self, j, msg="local matrix is not positive definite"):
        super().__init__(f"subdomain {j}: {msg}")
        self.subdomain = j


def node_points(mesh, dofmap):
    """Location of the interpolation node attached to each global dof."""
    return mesh.vertices[dofmap.node_vertices].mean(axis=1)


def _component_name(dofmap, g):
    for name in dofmap.counts:
        sl = dofmap.component_slice(name)
        if sl.start <= g < sl.stop:
            return name
    return "?"


@dataclass(frozen=True, eq=False)
class SubdomainDofSets:
    sets: tuple          # sorted int arrays of global dofs
    N: int

    @property
    def J(self):
        return len(self.sets)

    def multiplicity(self):
        counts = np.zeros(self.N, dtype=np.int64)
        for s in self.sets:
            counts[s] += 1
        return counts

    def restrict(self, j, x):
        """Zero the entries of ``x`` that do not belong to subdomain ``j``."""
        out = np.zeros_like(x)
        out[self.sets[j]] = x[self.sets[j]]
        return out


def element_incidence(mesh, dofmap):
    """Binary (nel, N) matrix: element e touches dof g."""
    dm = dofmap
    nel = mesh.num_elements
    rows = np.repeat(np.arange(nel), dm.l2g.shape[1])
    cols = dm.l2g.ravel()
    keep = cols >= 0
    E = sp.csr_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(nel, dm.N))
    E.sum_duplicates()
    E.data[:] = 1.0
    return E


def build_dof_sets(mesh, layout, dofmap):
    """Global dofs of each subdomain space; raises if some dof is in no subdomain.

    With the "element" convention a dof belongs to subdomain j when every
    element touching it is a member element. With the "nodal" convention it
    belongs when its interpolation node lies strictly inside the region.
    """
    if layout.mesh.n != mesh.n or dofmap.n != mesh.n:
        raise ConfigurationError("layout, dofmap and mesh disagree on the mesh size")
    N = dofmap.N
    sets = []
    if layout.convention == "element":
        E = element_incidence(mesh, dofmap)
        degree = np.asarray(E.sum(axis=0)).ravel()
        Et = E.T.tocsr()
        for j in range(layout.J):
            touching = Et @ layout.element_mask(j).astype(float)
            sets.append(np.flatnonzero(touching == degree))
    else:
        pts = node_points(mesh, dofmap)
        for j in range(layout.J):
            sets.append(np.flatnonzero(layout.strictly_inside(j, pts)))
    for s in sets:
        s.setflags(write=False)
    out = SubdomainDofSets(tuple(sets), N)
    uncovered = np.flatnonzero(out.multiplicity() == 0)
    if uncovered.size:
        g = int(uncovered[0])
        raise ConfigurationError(
            f"{uncovered.size} dofs belong to no subdomain, first is dof {g} "
            f"({_component_name(dofmap, g)}); increase delta")
    return out


class SchwarzPreconditioner:
    """``B = sum_j I_j A_j^{-1} I_j^T`` with exact local solves.

    Local matrices up to ``DENSE_LOCAL_LIMIT`` rows use a dense Cholesky
    factorization, larger ones a sparse LU in symmetric mode without pivoting,
    whose positive pivots certify positive definiteness.
    """

    def __init__(self, A, dof_sets):
        A = sp.csr_matrix(A)
        self.N = A.shape[0]
        self.dof_sets = dof_sets
        self._solvers = []
        for j, idx in enumerate(dof_sets.sets):
            Aj = A[idx][:, idx]
            self._solvers.append(self._factor(j, Aj))

    @staticmethod
    def _factor(j, Aj):
        if Aj.shape[0] <= DENSE_LOCAL_LIMIT:
            try:
                c = sla.cho_factor(Aj.toarray())
            except np.linalg.LinAlgError as exc:
                raise SubdomainFactorizationError(j) from exc
            return lambda r, c=c: sla.cho_solve(c, r)
        lu = spla.splu(Aj.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
        if np.any(lu.U.diagonal() <= 0):
            raise SubdomainFactorizationError(j)
        return lu.solve

    @property
    def J(self):
        return len(self._solvers)

    def apply(self, r):
        out = np.zeros(self.N)
        for idx, solve in zip(self.dof_sets.sets, self._solvers):
            out[idx] += solve(r[idx])
        return out

    __call__ = apply

    def matrix(self):
        """Dense B (only sensible for small problems)."""
        B = np.zeros((self.N, self.N))
        for idx, solve in zip(self.dof_sets.sets, self._solvers):
            B[np.ix_(idx, idx)] += solve(np.eye(len(idx)))
        return 0.5 * (B + B.T)

    def as_linear_operator(self):
        return spla.LinearOperator((self.N, self.N), matvec=self.apply, dtype=float)


def build_preconditioner(system, dof_sets):
    return SchwarzPreconditioner(system.A, dof_sets)


@dataclass
class PcgResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: np.ndarray          # ||r_k|| / ||r_0||, k = 0..iterations
    alphas: np.ndarray = field(repr=False)
    betas: np.ndarray = field(repr=False)
    energy_decrease: np.ndarray = field(repr=False)  # ||e_k||_A^2 - ||e_{k+1}||_A^2 >= 0

    def ritz_values(self):
        """Eigenvalues of the Lanczos tridiagonal implied by the CG coefficients."""
        a, b = self.alphas, self.betas
        k = len(a)
        if k == 0:
            return np.array([])
        diag = 1.0 / a
        diag[1:] += b[:k - 1] / a[:k - 1]
        off = np.sqrt(b[:k - 1]) / a[:k - 1]
        return sla.eigvalsh_tridiagonal(diag, off)

    @property
    def ritz_min(self):
        rv = self.ritz_values()
        return float(rv[0]) if rv.size else float("nan")

    @property
    def ritz_max(self):
        rv = self.ritz_values()
        return float(rv[-1]) if rv.size else float("nan")


def pcg(A, b=None, precond=None, tol=1e-10, max_iter=None, x0=None):
    """Preconditioned CG; stops when ||r_k||_2 <= tol * ||r_0||_2.

    ``A`` is an assembled system (``b`` then defaults to its load vector), a
    CSR matrix or anything supporting ``@``. ``precond`` is a callable or None
    for the identity. Exceeding ``max_iter`` returns a non-converged result
    instead of raising.
    """
    if hasattr(A, "dofmap"):
        b = A.rhs if b is None else b
        A = A.A
    if b is None:
        raise ValueError("right-hand side required")
    def matvec(v):
        return A @ v

    n = len(b)
    max_iter = 10 * n if max_iter is None else int(max_iter)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x) if x0 is not None else np.array(b, dtype=float)
    r0 = np.linalg.norm(r)
    residuals = [1.0]
    alphas, betas, decrease = [], [], []
    if r0 == 0.0:
        return PcgResult(x, 0, True, np.array(residuals), np.array([]), np.array([]), np.array([]))
    z = precond(r) if precond is not None else r.copy()
    p = z.copy()
    rz = r @ z
    converged = False
    k = 0
    while k < max_iter:
        Ap = matvec(p)
        pAp = p @ Ap
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        k += 1
        alphas.append(alpha)
        decrease.append(alpha * rz)
        rel = np.linalg.norm(r) / r0
        residuals.append(rel)
        if rel <= tol:
            converged = True
            break
        z = precond(r) if precond is not None else r.copy()
        rz_new = r @ z
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
    return PcgResult(x, k, converged, np.array(residuals), np.array(alphas), np.array(betas),
                     np.array(decrease))


@dataclass(frozen=True)
class SpectralBounds:
    lambda_min: float
    lambda_max: float
    method: str
    converged: bool = True

    @property
    def kappa(self):
        return self.lambda_max / self.lambda_min


def spectral_bounds(system, precond=None, dense_limit=4000, seed=0, max_iter=20000):
    """Extreme eigenvalues of ``B A`` (or ``A`` without a preconditioner).

    Dense generalized eigensolve when ``N <= dense_limit``; otherwise extreme
    Ritz values of a tightly converged PCG run on a random right-hand side.
    """
    N = system.N
    if N <= dense_limit:
        A = system.A.toarray()
        if precond is None:
            ev = np.linalg.eigvalsh(A)
        else:
            L = np.linalg.cholesky(precond.matrix())
            ev = np.linalg.eigvalsh(L.T @ A @ L)
        return SpectralBounds(float(ev[0]), float(ev[-1]), "dense")
    rng = np.random.default_rng(seed)
    res = pcg(system.A, rng.standard_normal(N), precond, tol=1e-14, max_iter=max_iter)
    return SpectralBounds(res.ritz_min, res.ritz_max, "ritz", res.converged)


@dataclass(frozen=True)
class StableDecomposition:
    sum_energy: float
    energy: float
    pieces: np.ndarray = field(repr=False)  # (J, N)

    @property
    def ratio(self):
        return self.sum_energy / self.energy if self.energy > 0 else float("nan")


def verify_stable_decomposition(system, layout, pou, U, dof_sets=None, tol=1e-10):
    """Split ``U`` by nodal interpolation of theta_j * U and compare energies.

    Returns sum_j a(U_j, U_j), a(U, U) and the pieces. Raises ArithmeticError
    when the pieces do not add up to ``U`` or leave their subdomain space.
    """
    U = np.asarray(U, dtype=float)
    if dof_sets is None:
        dof_sets = build_dof_sets(system.mesh, layout, system.dofmap)
    theta = pou(node_points(system.mesh, system.dofmap))           # (J, N)
    pieces = theta * U[None, :]
    scale = max(np.max(np.abs(U)), 1e-300)
    if np.max(np.abs(pieces.sum(axis=0) - U)) > tol * scale:
        raise ArithmeticError("decomposition pieces do not sum to U")
    for j, idx in enumerate(dof_sets.sets):
        outside = np.ones(system.N, dtype=bool)
        outside[idx] = False
        if np.any(np.abs(pieces[j, outside]) > tol * scale):
            raise ArithmeticError(f"piece {j} is not supported in its subdomain")
    sum_energy = sum(system.energy(pj) for pj in pieces)
    return StableDecomposition(float(sum_energy), system.energy(U), pieces)
