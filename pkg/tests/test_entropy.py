import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from bslab.entropy import (
    EntropyReport,
    bridge_entropy_matrix,
    bridge_entropy_sup,
    bridge_midpoint_entropy,
    candidate_entropy_bound,
    gaussian_bridge_diagnostics,
    gaussian_bridge_entropy,
    gaussian_candidate_entropy,
    gaussian_endpoint_entropy,
    gaussian_kl,
    gaussian_kl_quadrature,
    kinetic_energy_estimate,
    kl_divergence,
    path_measure_entropy,
)
from bslab.geometry import UnsupportedGeometryError, cell_kernel, circle, euclidean, torus
from bslab.kinetics import constant_field
from bslab.measures import Coupling, GridMeasure
from bslab.sampling import PathEnsemble, TimeGrid, gaussian_coupling
from bslab.solver import DiscretePathMeasure, discretize_reference
from oracles import enumerate_paths, random_stochastic, relative_entropy


# ---------------------------------------------------------------- grid KL


def test_kl_two_cell_oracle():
    r = kl_divergence(np.array([0.5, 0.5]), np.array([0.25, 0.75]))
    assert r.is_finite
    assert r.total == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3), abs=1e-15)


def test_kl_infinite_flag():
    r = kl_divergence(np.array([0.5, 0.5]), np.array([0.0, 1.0]))
    assert not r.is_finite and r.total == math.inf
    assert json.loads(r.to_json())["total"] is None


def test_kl_accepts_grid_measures():
    g = circle(1.0)
    mu = GridMeasure(np.array([0.1, 0.2, 0.3, 0.4]), (4,), g)
    nu = GridMeasure.uniform(g, 4)
    assert kl_divergence(mu, nu).total == pytest.approx(relative_entropy(mu.masses, nu.masses), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8),
       st.lists(st.floats(0.01, 1.0), min_size=8, max_size=8))
def test_kl_nonnegative_zero_iff_equal(a, b):
    p = np.array(a)
    if p.sum() <= 0:
        return
    p /= p.sum()
    q = np.array(b[: p.size])
    q /= q.sum()
    val = kl_divergence(p, q).total
    assert val >= 0
    assert kl_divergence(p, p).total == 0.0
    if not np.allclose(p, q, atol=1e-6):
        assert val > 0


def test_entropy_report_json():
    r = EntropyReport.from_terms(a=0.25, b=0.5)
    d = json.loads(r.to_json())
    assert d == {"total": 0.75, "is_finite": True, "terms": {"a": 0.25, "b": 0.5}}


# ---------------------------------------------------------------- bridges


def test_bridge_midpoint_entropy_resolution():
    for L in [1.0, 4.0]:
        g = circle(L)
        coarse = bridge_midpoint_entropy(g, 0.0, 0.0, 128)
        fine = bridge_midpoint_entropy(g, 0.0, 0.0, 1280)
        assert math.isfinite(coarse) and coarse >= 0
        assert coarse == pytest.approx(fine, abs=1e-6)


def test_bridge_midpoint_entropy_quadrature_oracle():
    # H(vol | bridge midpoint) = -int log(p(x,z) p(z,y) / p_1(x,y)) dz on circle(4)
    from bslab.geometry import heat_kernel

    g, x, y = circle(4.0), 0.5, 2.9
    f = lambda z: -math.log(heat_kernel(g, 0.5, x, z) * heat_kernel(g, 0.5, z, y)
                            / heat_kernel(g, 1.0, x, y))
    oracle, _ = integrate.quad(f, 0, 4.0, points=[x, y], limit=200, epsabs=1e-12)
    assert bridge_midpoint_entropy(g, x, y, 512) == pytest.approx(oracle / 4.0, abs=1e-8)


def test_bridge_entropy_symmetric():
    g = torus(2.0, 2.0)
    xs = np.array([[0.1, 0.3], [1.2, 0.8], [1.9, 1.5]])
    H = bridge_entropy_matrix(g, xs, xs, 64)
    np.testing.assert_allclose(H, H.T, atol=1e-12)


def test_bridge_entropy_sup_below_cap():
    for g in [circle(1.0), circle(4.0)]:
        s = bridge_entropy_sup(g, 16, 64)
        assert 0 <= s["sup"] <= s["cap"]


def test_bridge_entropy_rejects_gaussian():
    with pytest.raises(UnsupportedGeometryError):
        bridge_midpoint_entropy(euclidean(1), 0.0, 0.0)


# ---------------------------------------------------------------- Gaussian case


def test_gaussian_bridge_entropy_antipodal_oracle():
    x = np.array([0.7, -0.2])
    d = gaussian_bridge_diagnostics(x, -x)
    assert d["half_sq_sum"] == 0.0 and d["half_sq_diff"] > 0
    assert gaussian_bridge_entropy(x, -x) == pytest.approx(d["quadrature"], abs=1e-8)
    assert d["quadrature"] == pytest.approx(0.0, abs=1e-8)


def test_gaussian_bridge_entropy_zero():
    assert gaussian_bridge_entropy(np.zeros(3), np.zeros(3)) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_gaussian_bridge_entropy_matches_quadrature(x, y):
    assert gaussian_bridge_entropy(np.array([x]), np.array([y])) == pytest.approx(
        gaussian_kl_quadrature(np.array([x]), np.array([y])), abs=1e-8)


def test_gaussian_kl_against_scalar_quadrature():
    m0, v0, m1, v1 = 0.3, 0.25, -0.1, 0.5
    p = lambda u: math.exp(-(u - m0) ** 2 / (2 * v0)) / math.sqrt(2 * math.pi * v0)
    q = lambda u: math.exp(-(u - m1) ** 2 / (2 * v1)) / math.sqrt(2 * math.pi * v1)
    oracle, _ = integrate.quad(lambda u: p(u) * math.log(p(u) / q(u)), -10, 10, epsabs=1e-13)
    val = gaussian_kl(np.array([m0]), np.array([[v0]]), np.array([m1]), np.array([[v1]]))
    assert val == pytest.approx(oracle, abs=1e-10)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("rho", [-0.5, 0.0, 0.5, 0.9])
def test_gaussian_integrated_bound(n, rho):
    r = gaussian_candidate_entropy(n, rho)
    assert r.terms["conditional"] <= n / 2
    assert r.total <= gaussian_endpoint_entropy(n, rho) + n / 2
    # Monte Carlo integral of the shipped pairwise entropy
    x, y = gaussian_coupling(n, rho).sample(200_000, np.random.default_rng(0))
    mc = np.mean(0.5 * np.sum((x + y) ** 2, axis=1))
    assert mc == pytest.approx(r.terms["conditional"], rel=0.02)


# ---------------------------------------------------------------- candidate entropy


def test_candidate_with_reference_coupling():
    g, N = circle(4.0), 16
    R01 = Coupling(cell_kernel(g, N, 1.0) / N, (N,), g)
    r = candidate_entropy_bound(R01, g, resolution=64)
    assert r.terms["endpoint"] == pytest.approx(0.0, abs=1e-14)
    centers = np.arange(N)[:, None] * 4.0 / N + 2.0 / N
    oracle = np.sum(R01.matrix * bridge_entropy_matrix(g, centers, centers, 64))
    assert r.total == pytest.approx(oracle, abs=1e-12)


def test_candidate_null_cell_is_infinite():
    g = circle(1.0)
    kernels = [np.eye(4), np.eye(4)]   # deterministic reference: R_01 is diagonal
    pi = Coupling(np.full((4, 4), 1 / 16), (4,), g)
    assert not candidate_entropy_bound(pi, kernels=kernels).is_finite


def test_candidate_terms_sum_to_total():
    g, N = circle(1.0), 32
    pi = Coupling(np.full((N, N), 1 / N**2), (N,), g)
    r = candidate_entropy_bound(pi, g, resolution=64)
    assert r.total == pytest.approx(r.terms["endpoint"] + r.terms["conditional"], abs=1e-10)
    kernels = discretize_reference(circle(4.0), N, TimeGrid.uniform(4))
    r = candidate_entropy_bound(Coupling(pi.matrix, (N,), circle(4.0)), kernels=kernels)
    assert r.total == pytest.approx(r.terms["endpoint"] + r.terms["conditional"], abs=1e-10)


def test_candidate_discrete_bound_matches_enumeration():
    # glued candidate on N=3 cells, T=2: law pi(x, y) / N over the midpoint, brute force
    rng = np.random.default_rng(1)
    N = 3
    K = random_stochastic(rng, N)
    P = random_stochastic(rng, N) / N
    g = circle(1.0)
    r = candidate_entropy_bound(Coupling(P, (N,), g), kernels=[K, K])
    Q = np.einsum("xy,z->xzy", P, np.full(N, 1 / N))
    R = np.einsum("x,xz,zy->xzy", np.full(N, 1 / N), K, K)
    assert r.total == pytest.approx(relative_entropy(Q, R), abs=1e-12)


# ---------------------------------------------------------------- path measures


def _small_measure(rng, N=4, T=3):
    kernels = [random_stochastic(rng, N) for _ in range(T)]
    r0 = np.full(N, 1.0 / N)
    log_w = rng.normal(size=(N, N))
    log_a = rng.normal(size=(T + 1, N))
    return DiscretePathMeasure(log_w, log_a, kernels, r0)


def test_reference_has_zero_entropy():
    rng = np.random.default_rng(2)
    m = _small_measure(rng)
    ref = DiscretePathMeasure.reference(m.kernels, m.r0)
    assert path_measure_entropy(ref).total == pytest.approx(0.0, abs=1e-14)


def test_endpoint_reweighting_entropy_is_endpoint_kl():
    rng = np.random.default_rng(3)
    m = _small_measure(rng)
    ref = DiscretePathMeasure.reference(m.kernels, m.r0)
    R0T = ref.endpoint_law()
    pi = random_stochastic(rng, 4, sym=False) / 4
    m2 = DiscretePathMeasure(np.log(pi / R0T), np.zeros_like(m.log_a), m.kernels, m.r0)
    assert path_measure_entropy(m2).total == pytest.approx(relative_entropy(pi, R0T), abs=1e-10)
    paths, Q, R = enumerate_paths(m2.log_w, m2.log_a, m2.kernels, m2.r0)
    assert relative_entropy(Q, R) == pytest.approx(relative_entropy(pi, R0T), abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_factorised_entropy_matches_enumeration(seed):
    m = _small_measure(np.random.default_rng(seed))
    r = path_measure_entropy(m)
    paths, Q, R = enumerate_paths(m.log_w, m.log_a, m.kernels, m.r0)
    assert r.total == pytest.approx(relative_entropy(Q, R), abs=1e-10)
    q0 = np.bincount(paths[:, 0], weights=Q, minlength=m.N)
    assert r.total == pytest.approx(sum(r.terms.values()), abs=1e-10)
    assert min(r.terms.values()) >= -1e-12
    assert relative_entropy(q0, m.r0) in [pytest.approx(v, abs=1e-10) for v in r.terms.values()]


# ---------------------------------------------------------------- kinetic energy


def test_kinetic_energy_zero_field():
    g = torus(1.0, 1.0)
    grid = TimeGrid.uniform(4)
    pos = np.random.default_rng(0).uniform(0, 1, (100, 5, 2))
    e = PathEnsemble(grid, pos, g)
    v = constant_field(g, 4, grid.times, [0.0, 0.0])
    assert kinetic_energy_estimate(e, v) == 0.0


def test_kinetic_energy_constant_drift():
    g, b = torus(1.0, 1.0), np.array([0.3, -0.4])
    T, n = 20, 20_000
    grid = TimeGrid.uniform(T)
    rng = np.random.default_rng(4)
    inc = b * (1 / T) + rng.normal(0, math.sqrt(1 / T), (n, T, 2))
    pos = np.mod(np.concatenate([rng.uniform(0, 1, (n, 1, 2)), inc], 1).cumsum(1), 1.0)
    e = PathEnsemble(grid, pos, g)
    v = constant_field(g, 4, grid.times, b)
    assert kinetic_energy_estimate(e, v) == pytest.approx(0.5 * b @ b, rel=1e-12)
    # drift recovered from the increments gives the same energy within Monte Carlo error
    # each component of the estimate has standard error 1/sqrt(n)
    est = inc.mean((0, 1)) * T
    se = np.linalg.norm(b) / math.sqrt(n)
    assert 0.5 * est @ est == pytest.approx(0.5 * b @ b, abs=4 * se)
