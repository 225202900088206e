import dataclasses
import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp

from dpgschwarz import schwarz
from dpgschwarz.mesh import build_partition_of_unity, build_subdomains
from dpgschwarz.schwarz import (
    ConfigurationError,
    SchwarzPreconditioner,
    SubdomainDofSets,
    SubdomainFactorizationError,
    build_dof_sets,
    build_preconditioner,
    pcg,
    spectral_bounds,
    verify_stable_decomposition,
)
from conftest import poisson_system

CONVENTIONS = ["element", "nodal"]


def setup(n, H, delta, convention):
    s = poisson_system(n)
    layout = build_subdomains(s.mesh, H, delta, convention)
    sets = build_dof_sets(s.mesh, layout, s.dofmap)
    return s, layout, sets


@pytest.mark.parametrize("convention", CONVENTIONS)
def test_single_subdomain_covers_everything(convention):
    s, _, sets = setup(4, 1, 1, convention)
    assert sets.J == 1 and np.array_equal(sets.sets[0], np.arange(s.N))


@pytest.mark.parametrize("convention", CONVENTIONS)
def test_membership_examples(convention):
    s, _, sets = setup(4, "1/2", "1/4", convention)
    mult = sets.multiplicity()
    corner_sigma = s.dofmap.l2g[0, 0]          # element 0 sits in the corner (0, 0)
    assert mult[corner_sigma] == 1
    center = s.dofmap.vertex_dof[s.mesh.vertex_id(2, 2)]
    assert mult[center] == 4
    assert sum(len(x) for x in sets.sets) >= s.N
    assert all(np.all(np.diff(x) > 0) for x in sets.sets)


def test_element_rule_by_enumeration():
    s, layout, sets = setup(4, "1/2", "1/4", "element")
    for j in range(layout.J):
        members = set(layout.member_elements[j].tolist())
        expected = [g for g in range(s.N)
                    if set(np.flatnonzero((s.dofmap.l2g == g).any(axis=1)).tolist()) <= members]
        assert np.array_equal(sets.sets[j], expected)


def test_restriction_consistency():
    s, _, sets = setup(4, "1/2", "1/4", "nodal")
    rng = np.random.default_rng(0)
    for j in range(sets.J):
        x = np.zeros(s.N)
        x[sets.sets[j]] = rng.standard_normal(len(sets.sets[j]))
        assert np.array_equal(sets.restrict(j, x), x)


@pytest.mark.parametrize("convention", CONVENTIONS)
def test_uncovered_dof_is_reported(convention):
    s = poisson_system(4)
    layout = build_subdomains(s.mesh, "1/2", "1/4", convention)
    partial = dataclasses.replace(layout, member_elements=layout.member_elements[:1],
                                  regions=layout.regions[:1], base_regions=layout.base_regions[:1])
    with pytest.raises(ConfigurationError, match="dof"):
        build_dof_sets(s.mesh, partial, s.dofmap)


@pytest.mark.parametrize("convention", CONVENTIONS)
def test_preconditioner_symmetric_positive(convention):
    s, _, sets = setup(4, "1/2", "1/4", convention)
    B = build_preconditioner(s, sets)
    assert not B.apply(np.zeros(s.N)).any()
    rng = np.random.default_rng(1)
    for _ in range(20):
        r, t = rng.standard_normal(s.N), rng.standard_normal(s.N)
        lhs, rhs = B(r) @ t, r @ B(t)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)
        assert B(r) @ r > 0
    x = rng.standard_normal(s.N)
    assert np.allclose(B.matrix() @ x, B(x))
    assert np.allclose(B.as_linear_operator() @ x, B(x))


def test_sparse_and_dense_local_solves_agree(monkeypatch):
    s, _, sets = setup(8, "1/2", "1/4", "element")
    r = np.random.default_rng(2).standard_normal(s.N)
    dense = build_preconditioner(s, sets)(r)
    monkeypatch.setattr(schwarz, "DENSE_LOCAL_LIMIT", 0)
    sparse = build_preconditioner(s, sets)(r)
    assert np.allclose(dense, sparse, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("limit", [10**6, 0])
def test_indefinite_local_matrix_names_subdomain(monkeypatch, limit):
    monkeypatch.setattr(schwarz, "DENSE_LOCAL_LIMIT", limit)
    A = sp.diags([1.0, 1.0, -1.0, 1.0]).tocsr()
    sets = SubdomainDofSets((np.array([0, 1]), np.array([1, 2, 3])), 4)
    with pytest.raises(SubdomainFactorizationError, match="subdomain 1") as exc:
        SchwarzPreconditioner(A, sets)
    assert exc.value.subdomain == 1


def test_pcg_identity_one_iteration():
    res = pcg(sp.identity(5, format="csr"), np.arange(1.0, 6.0))
    assert res.converged and res.iterations == 1
    assert np.allclose(res.x, np.arange(1.0, 6.0))


def test_pcg_distinct_eigenvalues():
    A = sp.diags(np.repeat([1.0, 2.0, 5.0], 4)).tocsr()
    res = pcg(A, np.ones(12))
    assert res.converged and res.iterations == 3
    assert np.allclose(np.sort(res.ritz_values()), [1, 2, 5])


def test_pcg_zero_rhs():
    res = pcg(sp.identity(3, format="csr"), np.zeros(3))
    assert res.converged and res.iterations == 0 and not res.x.any()


def test_pcg_nonconvergence_is_a_result(system4):
    res = pcg(system4, max_iter=3)
    assert not res.converged and res.iterations == 3 and len(res.residuals) == 4


@pytest.mark.parametrize("convention", CONVENTIONS)
def test_pcg_history(convention, system4):
    s, _, sets = setup(4, "1/2", "1/4", convention)
    B = build_preconditioner(s, sets)
    res = pcg(s, precond=B)
    assert res.converged
    assert res.residuals[-1] <= 1e-10 and np.all(res.residuals[:-1] > 1e-10)
    assert np.allclose(res.x, s.solve(), atol=1e-8)
    assert res.ritz_min > 0
    # CG minimizes the A-norm of the error, which therefore decreases monotonically
    xs = s.solve()
    assert np.all(res.energy_decrease > 0)
    errs = [s.energy(xs)]
    for d in res.energy_decrease:
        errs.append(errs[-1] - d)
    assert np.all(np.diff(errs) <= 1e-8 * errs[0])
    assert abs(errs[-1]) <= 1e-8 * errs[0]


@pytest.mark.parametrize("convention", CONVENTIONS)
@pytest.mark.parametrize("n,delta", [(4, "1/4"), (8, "1/8"), (8, "1/4")])
def test_spectrum_and_iteration_bound(convention, n, delta):
    s, _, sets = setup(n, "1/2", delta, convention)
    B = build_preconditioner(s, sets)
    sb = spectral_bounds(s, B)
    assert sb.method == "dense"
    assert 0 < sb.lambda_min and sb.lambda_max <= sets.multiplicity().max() + 1e-6
    assert sb.lambda_max <= 4 + 1e-6
    res = pcg(s, precond=B)
    bound = math.ceil(0.5 * math.sqrt(sb.kappa) * math.log(2 / 1e-10)) + 5
    assert res.iterations <= bound
    # Ritz values lie inside the spectrum
    assert sb.lambda_min - 1e-8 <= res.ritz_min and res.ritz_max <= sb.lambda_max + 1e-8


def test_ritz_path_matches_dense():
    s, _, sets = setup(8, "1/2", "1/8", "element")
    B = build_preconditioner(s, sets)
    dense = spectral_bounds(s, B)
    ritz = spectral_bounds(s, B, dense_limit=0)
    assert ritz.method == "ritz" and ritz.converged
    assert np.isclose(dense.lambda_min, ritz.lambda_min, rtol=1e-6)
    assert np.isclose(dense.lambda_max, ritz.lambda_max, rtol=1e-6)


def test_exact_preconditioner_spectrum():
    s, _, sets = setup(4, 1, 1, "element")
    sb = spectral_bounds(s, build_preconditioner(s, sets))
    assert abs(sb.lambda_min - 1) < 1e-8 and abs(sb.lambda_max - 1) < 1e-8


@pytest.mark.parametrize("convention", CONVENTIONS)
def test_stable_decomposition_identity(convention):
    s, layout, sets = setup(8, "1/2", "1/8", convention)
    pou = build_partition_of_unity(layout)
    rng = np.random.default_rng(4)
    for _ in range(5):
        U = rng.standard_normal(s.N)
        d = verify_stable_decomposition(s, layout, pou, U, sets)
        assert np.max(np.abs(d.pieces.sum(axis=0) - U)) <= 1e-10 * np.max(np.abs(U))
        assert np.isclose(d.energy, s.energy(U)) and d.sum_energy > 0


def test_stable_decomposition_trivial_cases():
    s, layout, sets = setup(4, 1, 1, "element")
    pou = build_partition_of_unity(layout)
    U = np.random.default_rng(5).standard_normal(s.N)
    d = verify_stable_decomposition(s, layout, pou, U)
    assert np.isclose(d.ratio, 1.0)
    s, layout, sets = setup(4, "1/2", "1/4", "nodal")
    d = verify_stable_decomposition(s, layout, build_partition_of_unity(layout), np.zeros(s.N))
    assert d.sum_energy == 0 and d.energy == 0 and not d.pieces.any()


def test_decomposition_mismatch_is_an_error():
    s, layout, sets = setup(4, "1/2", "1/4", "nodal")
    pou = build_partition_of_unity(layout)
    bad = dataclasses.replace(pou, layout=build_subdomains(s.mesh, "1/2", "1/2", "nodal"))
    # theta from a wider overlap is not supported inside the narrower subdomain spaces
    with pytest.raises(ArithmeticError):
        verify_stable_decomposition(s, layout, bad, np.ones(s.N), sets)


@pytest.mark.parametrize("convention", CONVENTIONS)
def test_kappa_growth_when_halving_subdomains(convention):
    s = poisson_system(32)
    kappas = []
    for k in (2, 4, 8, 16):
        layout = build_subdomains(s.mesh, Fraction(1, k), Fraction(1, 2 * k), convention)
        sb = spectral_bounds(s, build_preconditioner(s, build_dof_sets(s.mesh, layout, s.dofmap)))
        assert sb.converged
        kappas.append(sb.kappa)
    growth = np.array(kappas[1:]) / kappas[:-1]
    assert np.all((growth >= 1.5) & (growth <= 4.5)), growth
