import math

import numpy as np
import pytest

from bslab.geometry import UnsupportedGeometryError, box, circle, heat_kernel, interval, torus
from bslab.io import write_field_csv
from bslab.kinetics import (
    InsufficientDataError,
    constant_field,
    continuity_residual,
    current_velocity,
    divergence_l1,
    estimate_backward_velocity,
    estimate_forward_velocity,
    estimate_local_time,
    exact_velocities,
    linear_field,
    reverse_ensemble,
    start_conditioned_kinetic_energy,
    uniform_histograms,
)
from bslab.measures import Coupling, VelocityField
from bslab.sampling import (
    PathEnsemble,
    TimeGrid,
    endpoint_histogram,
    lazy_coupling,
    marginal_histogram,
    sample_reflected_bm,
)
from bslab.solver import DiscretePathMeasure, discretize_reference, incompressible_problem, solve_ipfp


@pytest.fixture(scope="module")
def box_bm():
    return sample_reflected_bm(box(1.0, 1.0), "uniform", TimeGrid.uniform(100), seed=0, n_paths=100_000)


def _drifted_torus(b, n=100_000, T=100, seed=1):
    rng = np.random.default_rng(seed)
    h = 1.0 / T
    start = rng.uniform(0, 1, (n, 1, 2))
    inc = b * h + rng.normal(0, math.sqrt(h), (n, T, 2))
    pos = np.mod(np.concatenate([start, inc], 1).cumsum(1), 1.0)
    return PathEnsemble(TimeGrid.uniform(T), pos, torus(1.0, 1.0))


# ---------------------------------------------------------------- forward / backward


def test_zero_drift_band(box_bm):
    v = estimate_forward_velocity(box_bm, 5)
    z = np.abs(v.values) / v.stderr
    populated = np.isfinite(z)
    assert populated.sum() > 0
    assert np.mean(z[populated] < 4) >= 0.99


def test_constant_drift_recovered():
    b = np.array([0.8, -0.5])
    v = estimate_forward_velocity(_drifted_torus(b), 4)
    dev = np.abs(v.values - b) / v.stderr
    assert np.mean(dev < 4) >= 0.99
    np.testing.assert_allclose(np.nanmean(v.values, axis=(0, 1, 2)), b, atol=0.05)


def test_reverse_is_involutive(box_bm):
    rr = reverse_ensemble(reverse_ensemble(box_bm))
    np.testing.assert_array_equal(rr.positions, box_bm.positions)
    np.testing.assert_array_equal(rr.times, box_bm.times)


def test_reversal_preserves_stationary_marginals(box_bm):
    r = reverse_ensemble(box_bm)
    for t in [0.2, 0.5, 0.9]:
        a = marginal_histogram(box_bm, t, 4).masses
        b = marginal_histogram(r, t, 4).masses
        assert 0.5 * np.abs(a - b).sum() < 0.02


def test_reversal_transposes_endpoint_coupling(box_bm):
    np.testing.assert_array_equal(endpoint_histogram(reverse_ensemble(box_bm), 3),
                                  endpoint_histogram(box_bm, 3).T)


def test_backward_is_reflected_forward(box_bm):
    b = estimate_backward_velocity(box_bm, 4)
    f = estimate_forward_velocity(reverse_ensemble(box_bm), 4)
    np.testing.assert_array_equal(b.values, -f.values[::-1])
    np.testing.assert_allclose(b.times, 1.0 - f.times[::-1], atol=1e-15)


def test_backward_velocity_driftless_stationary():
    e = sample_reflected_bm(circle(1.0), "uniform", TimeGrid.uniform(10), seed=2, n_paths=100_000)
    b = estimate_backward_velocity(e, 8)
    assert np.mean(np.abs(b.values) / b.stderr < 4) >= 0.99


def test_backward_velocity_from_point_mass():
    # X_0 = x0: E[X_t - X_{t-h} | X_t = x] / h = -d/dx log p_t(x0, x)
    g, x0, T = circle(1.0), 0.5, 20
    e = sample_reflected_bm(g, x0, TimeGrid.uniform(T), seed=3, n_paths=200_000)
    b = estimate_backward_velocity(e, 10, min_count=200)
    k = b.time_index(0.1)
    x = b.axes[0]
    du = 1e-6
    score = (np.log(heat_kernel(g, 0.1, x0, x + du)) - np.log(heat_kernel(g, 0.1, x0, x - du))) / (2 * du)
    est = b.values[k][:, 0]
    ok = np.isfinite(est)
    assert ok.sum() >= 6
    # sign: -v_backward points toward the start like the score
    assert np.all(np.sign(-est[ok]) == np.sign(score[ok]))
    assert np.all(np.abs(est[ok] + score[ok]) < 4 * b.stderr[k][ok, 0] + 0.1 * np.abs(score[ok]))


def test_insufficient_data():
    e = PathEnsemble(TimeGrid.uniform(2), np.full((3, 3, 1), 0.5), circle(1.0))
    with pytest.raises(InsufficientDataError):
        estimate_forward_velocity(e, 4)


# ---------------------------------------------------------------- current velocity


def _random_field(seed=0):
    rng = np.random.default_rng(seed)
    g = torus(1.0, 1.0)
    axes = tuple((np.arange(4) + 0.5) / 4 for _ in range(2))
    return VelocityField(np.array([0.0, 0.5]), axes, rng.normal(size=(2, 4, 4, 2)), g)


def test_current_velocity_symmetry():
    f = _random_field()
    minus = VelocityField(f.times, f.axes, -f.values, f.geometry)
    np.testing.assert_array_equal(current_velocity(f, minus).values, 0.0)
    np.testing.assert_array_equal(current_velocity(f, f).values, f.values)


def test_current_velocity_rejects_mismatched_grids():
    f = _random_field()
    other = VelocityField(f.times, tuple(a[:3] for a in f.axes), f.values[:, :3, :3], f.geometry)
    with pytest.raises(ValueError):
        current_velocity(f, other)


def test_shear_current_is_divergence_free():
    # x_1 is sheared by an amount that depends on x_2 only: a nonzero, divergence-free flow
    L, n = 4.0, 16
    c = (np.arange(n) + 0.5) * L / n
    shift = 0.8 * np.sin(2 * np.pi * c / L)
    P = np.zeros((n, n, n, n))
    for i2 in range(n):
        d = (c[None, :] - c[:, None] - shift[i2] + L / 2) % L - L / 2
        G = np.exp(-(d**2) / (2 * 0.25**2))
        P[:, i2, :, i2] = G / G.sum(1, keepdims=True)
    P = P.reshape(n * n, n * n)
    g = torus(L, L)
    prob = incompressible_problem(g, (n, n), 8, Coupling(P / P.sum(), (n, n), g))
    sol, _ = solve_ipfp(prob, tol=1e-9, track_entropy=False)
    cu = current_velocity(*exact_velocities(sol))
    assert np.mean(np.abs(cu.values)) > 0.1
    for k in range(1, cu.times.size - 1):
        assert divergence_l1(cu, k) < 0.05


def test_exact_velocities_of_reference_vanish():
    g, N, T = circle(1.0), 16, 4
    grid = TimeGrid.uniform(T)
    ref = DiscretePathMeasure.reference(discretize_reference(g, N, grid), np.full(N, 1 / N),
                                        grid, g, (N,))
    f, b = exact_velocities(ref)
    np.testing.assert_allclose(f.values, 0.0, atol=1e-12)
    np.testing.assert_allclose(b.values, 0.0, atol=1e-12)
    assert start_conditioned_kinetic_energy(ref) == pytest.approx(0.0, abs=1e-12)


def test_field_csv_roundtrip(tmp_path):
    from bslab.io import read_field_csv

    f = _random_field(1)
    p = write_field_csv(f, tmp_path / "v.csv")
    back = read_field_csv(p, f.geometry)
    np.testing.assert_array_equal(back.values, f.values)
    np.testing.assert_array_equal(back.times, f.times)


# ---------------------------------------------------------------- local time


def test_local_time_rejects_torus():
    e = sample_reflected_bm(torus(1.0, 1.0), "uniform", TimeGrid.uniform(2), seed=4, n_paths=10)
    with pytest.raises(UnsupportedGeometryError):
        estimate_local_time(e, 0.05)


def test_local_time_richardson_pair():
    e = sample_reflected_bm(interval(1.0), "uniform", TimeGrid.uniform(20), seed=5, n_paths=100_000)
    a, b = estimate_local_time(e, 0.04), estimate_local_time(e, 0.02)
    assert abs(a.mean_rate - b.mean_rate) < 0.1 * a.mean_rate
    # stationary: the rate is flat in time
    assert np.ptp(a.rates) < 0.1 * a.mean_rate


def test_local_time_zero_away_from_boundary():
    pos = np.full((50, 3, 2), 0.5)
    e = PathEnsemble(TimeGrid.uniform(2), pos, box(1.0, 1.0))
    lt = estimate_local_time(e, 0.1)
    np.testing.assert_array_equal(lt.rates, 0.0)


def test_local_time_surface_weights_box():
    e = sample_reflected_bm(box(1.0, 2.0), "uniform", TimeGrid.uniform(4), seed=6, n_paths=50_000)
    w = estimate_local_time(e, 0.05).surface_weights
    # faces normal to axis 0 have length 2, faces normal to axis 1 length 1
    np.testing.assert_allclose(w, [1 / 3, 1 / 3, 1 / 6, 1 / 6], atol=0.02)


# ---------------------------------------------------------------- continuity


def test_continuity_zero_field():
    g, times = torus(1.0, 1.0), np.linspace(0, 1, 5)
    r = continuity_residual(uniform_histograms(g, 8, 5), times, constant_field(g, 8, times, [0, 0]))
    assert max(r["residual"]) == pytest.approx(0.0, abs=1e-14)


def test_continuity_rotated_constant_field():
    g, times = torus(1.0, 1.0), np.linspace(0, 1, 5)
    th = 0.7
    v = constant_field(g, 16, times, [math.cos(th), math.sin(th)])
    r = continuity_residual(uniform_histograms(g, 16, 5), times, v)
    assert max(r["residual"]) < 1e-3


def test_continuity_compressible_control():
    times = np.linspace(0, 1, 5)
    g = box(1.0, 1.0)
    bad = continuity_residual(uniform_histograms(g, 16, 5), times, linear_field(g, 16, times))
    gt = torus(1.0, 1.0)
    good = continuity_residual(uniform_histograms(gt, 16, 5), times,
                               constant_field(gt, 16, times, [0.6, 0.8]))
    assert min(bad["residual"]) > 10 * max(max(good["residual"]), 1e-3)


def test_continuity_of_solver_marginals():
    from bslab.solver import marginal_measures

    g = circle(1.0)
    prob = incompressible_problem(g, 32, 8, lazy_coupling(g, 32, eps=0.2))
    sol, _ = solve_ipfp(prob, tol=1e-10, track_entropy=False)
    cu = current_velocity(*exact_velocities(sol))
    r = continuity_residual(marginal_measures(sol), prob.grid.times, cu)
    assert max(r["residual"]) < 1e-3
