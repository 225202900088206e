import numpy as np
import pytest

from dpgschwarz.trace_norms import (
    EdgeTraceScalar,
    boundary_mean,
    equivalence_sweep,
    h_half_norm_sq,
    h_minus_half_norm_sq,
    minimal_rt_lift,
    nodal_extension,
    oracle_h_half,
    oracle_h_minus_half,
    random_sighat_trace,
    random_uhat_trace,
    uhat_trace,
)


def ones(kind, h=1.0):
    return EdgeTraceScalar(kind, np.ones((4, 3 if kind == "uhat" else 2)), h)


def test_formula_values_on_constants():
    # h (|dK| + 0) with |dK| = 4h at h = 1
    assert np.isclose(h_half_norm_sq(ones("uhat")), 4.0)
    # h^2 |dK| + h^-2 (int_dK 1)^2 = 4 + 16
    assert np.isclose(h_minus_half_norm_sq(ones("sighat")), 20.0)
    assert np.isclose(boundary_mean(ones("sighat")), 1.0)


def test_edge_bubble_value():
    z = uhat_trace([0, 0, 0, 0], [1, 0, 0, 0])
    # int_0^1 (4s(1-s))^2 = 8/15, int_0^1 (4 - 8s)^2 = 16/3
    assert np.isclose(h_half_norm_sq(z), 8 / 15 + 16 / 3)


def test_trace_validation():
    with pytest.raises(ValueError):
        EdgeTraceScalar("uhat", np.arange(12.0).reshape(4, 3))
    with pytest.raises(ValueError):
        EdgeTraceScalar("sighat", np.ones((4, 3)))
    with pytest.raises(ValueError):
        EdgeTraceScalar("other", np.ones((4, 2)))


def test_trace_evaluation():
    z = uhat_trace([1, 2, 3, 4], [5, 6, 7, 8])
    assert np.allclose(z(0, [0, 0.5, 1]), [1, 5, 2])
    assert np.allclose(z(2, [0, 1]), [3, 4])


def test_h1_oracle_of_constant():
    # constant extension has norm^2 1, the true minimizer is slightly cheaper
    val = oracle_h_half(ones("uhat"))
    assert 0.9 < val <= 1.0
    ext, nrm = nodal_extension(ones("uhat"))
    assert np.allclose(ext, 1.0) and np.isclose(nrm, 1.0)


def test_nodal_extension_matches_trace():
    z = random_uhat_trace(np.random.default_rng(2))
    ext, _ = nodal_extension(z)
    assert np.allclose(ext[0, :], z.coeffs[0])    # bottom row
    assert np.allclose(ext[:, 2], z.coeffs[1])    # right column
    assert np.allclose(ext[2, :], z.coeffs[2])
    assert np.allclose(ext[:, 0], z.coeffs[3])


def test_rt_lift_constant_flux():
    lift = minimal_rt_lift(ones("sighat"))
    assert np.allclose(lift.normal_trace(), 1.0)
    # div q = |dK| / |K| = 4 everywhere
    assert np.allclose(lift.divergence(np.array([0.1, 0.7]), np.array([0.3, 0.9])), 4.0)


@pytest.mark.parametrize("h", [1.0, 0.25])
def test_lifts_bound_oracles(h):
    rng = np.random.default_rng(5)
    for _ in range(5):
        z = random_sighat_trace(rng, h)
        lift = minimal_rt_lift(z)
        assert np.allclose(lift.normal_trace(), z.coeffs, atol=1e-12)
        assert lift.hdiv_norm_sq() >= oracle_h_minus_half(z) * (1 - 1e-9)
        u = random_uhat_trace(rng, h)
        assert nodal_extension(u)[1] >= 0.99 * oracle_h_half(u)


def test_oracles_refinement_stable():
    rng = np.random.default_rng(7)
    z, u = random_sighat_trace(rng, 0.5), random_uhat_trace(rng, 0.5)
    assert np.isclose(oracle_h_minus_half(z, refinement=16), oracle_h_minus_half(z, refinement=32), rtol=1e-3)
    assert np.isclose(oracle_h_half(u, refinement=16), oracle_h_half(u, refinement=32), rtol=1e-2)


def test_oracle_batch_matches_single():
    rng = np.random.default_rng(8)
    traces = [random_uhat_trace(rng, 0.25) for _ in range(3)]
    batch = oracle_h_half(traces, 0.25)
    assert np.allclose(batch, [oracle_h_half(t) for t in traces])


def test_sweep_rows():
    rows = equivalence_sweep("h_minus_half", hs=(1.0, 0.5), samples=10)
    assert [r["h"] for r in rows] == [1.0, 0.5]
    for r in rows:
        assert 0 < r["min_ratio"] <= r["max_ratio"] < np.inf and r["samples"] == 10
    with pytest.raises(ValueError):
        equivalence_sweep("bogus")
