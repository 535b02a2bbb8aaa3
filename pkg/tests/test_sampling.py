import numpy as np
import pytest
from scipy import stats

from bslab.geometry import box, box_quotient, circle, euclidean, heat_kernel, torus
from bslab.measures import Coupling, GridMeasure
from bslab.sampling import (
    ConfigurationError,
    PathEnsemble,
    TimeGrid,
    build_candidate,
    build_gaussian_candidate,
    choose_images,
    endpoint_histogram,
    fold_ensemble,
    gaussian_coupling,
    gaussian_marginal_variance,
    lazy_coupling,
    marginal_histogram,
    sample_bridge,
    sample_reflected_bm,
    tube_occupation,
)


def test_time_grid_validation():
    with pytest.raises(ConfigurationError):
        TimeGrid(np.array([0.0, 0.5, 0.5, 1.0]))
    g = TimeGrid.uniform(4)
    np.testing.assert_allclose(g.times, [0, 0.25, 0.5, 0.75, 1.0])
    assert g.index(0.75) == 3


def test_stationarity_on_circle():
    e = sample_reflected_bm(circle(1.0), 0.3, TimeGrid(np.array([0.0, 10.0])), seed=0, n_paths=100_000)
    d = stats.kstest(e.at(10.0)[:, 0], "uniform").statistic
    assert d < 0.01


@pytest.mark.parametrize("g", [circle(1.0), torus(1.0, 2.0), euclidean(2)], ids=["circle", "torus", "plane"])
def test_single_step_increment_moments(g):
    dt, n = 0.01, 100_000
    e = sample_reflected_bm(g, np.full(g.dim, 0.5), TimeGrid(np.array([0.0, dt])), seed=1, n_paths=n)
    inc = e.positions[:, 1] - e.positions[:, 0]
    if g.periodic:
        inc -= g.length_array * np.round(inc / g.length_array)
    se_mean = np.sqrt(dt / n)
    np.testing.assert_array_less(np.abs(inc.mean(0)), 4 * se_mean)
    se_var = dt * np.sqrt(2 / n)
    np.testing.assert_array_less(np.abs(inc.var(0) - dt), 4 * se_var)


def test_reflected_bm_stays_inside_box():
    g = box(1.0, 0.5)
    e = sample_reflected_bm(g, [0.01, 0.49], TimeGrid.uniform(50), seed=2, n_paths=500)
    pts = e.positions.reshape(-1, 2)
    assert (pts >= 0).all() and (pts <= g.length_array).all()


def test_sampling_is_deterministic():
    grid = TimeGrid.uniform(10)
    a = sample_reflected_bm(torus(1.0, 1.0), [0.1, 0.2], grid, seed=7, n_paths=50)
    b = sample_reflected_bm(torus(1.0, 1.0), [0.1, 0.2], grid, seed=7, n_paths=50)
    np.testing.assert_array_equal(a.positions, b.positions)
    pi = lazy_coupling(torus(1.0, 1.0), 4)
    c = build_candidate(torus(1.0, 1.0), pi, 50, grid, seed=3)
    d = build_candidate(torus(1.0, 1.0), pi, 50, grid, seed=3)
    np.testing.assert_array_equal(c.positions, d.positions)


# ---------------------------------------------------------------- bridges


@pytest.mark.parametrize("g", [circle(1.0), torus(1.0, 1.0), box(1.0, 1.0), euclidean(2)],
                         ids=["circle", "torus", "box", "plane"])
def test_bridge_pinning_exact(g):
    x, y = np.full(g.dim, 0.2), np.full(g.dim, 0.9)
    for seed in range(5):
        e = sample_bridge(g, x, y, 0.0, 0.5, TimeGrid.uniform(8), seed=seed, n_paths=20)
        assert (e.positions[:, 0] == x).all()
        assert (e.positions[:, -1] == y).all()


def test_bridge_rejects_reversed_times():
    with pytest.raises(ValueError):
        sample_bridge(circle(1.0), 0.1, 0.2, 0.5, 0.5, TimeGrid.uniform(4))


def test_gaussian_bridge_midpoint_moments():
    x, y, n = np.array([0.4, -1.0]), np.array([1.2, 0.6]), 100_000
    e = sample_bridge(euclidean(2), x, y, 0.0, 1.0, TimeGrid.uniform(2), seed=4, n_paths=n)
    mid = e.at(0.5)
    np.testing.assert_array_less(np.abs(mid.mean(0) - (x + y) / 2), 4 * np.sqrt(0.25 / n))
    np.testing.assert_array_less(np.abs(mid.var(0) - 0.25), 4 * 0.25 * np.sqrt(2 / n))


def test_bridge_winding_law():
    n = 100_000
    _, windings, _ = choose_images(circle(1.0), np.zeros((n, 1)), np.zeros((n, 1)), 1.0,
                                   np.random.default_rng(5))
    k = windings[:, 0]
    ks = np.arange(-3, 4)
    w = np.exp(-(ks**2) / 2.0)
    w_all = np.exp(-(np.arange(-50, 51) ** 2) / 2.0).sum()
    expected = n * w / w_all
    observed = np.array([(k == j).sum() for j in ks])
    # pool the far tails into one bin
    expected = np.append(expected, n - expected.sum())
    observed = np.append(observed, n - observed.sum())
    chi2 = ((observed - expected) ** 2 / expected).sum()
    assert chi2 < stats.chi2.ppf(0.999, ks.size)


def test_bridge_interior_marginal_matches_density():
    # X_t of the bridge 0 -> 0.3 over [0, 1] has density p_t(x, z) p_{1-t}(z, y) / p_1(x, y)
    g, x, y, t = circle(1.0), 0.0, 0.3, 0.25
    e = sample_bridge(g, x, y, 0.0, 1.0, TimeGrid.uniform(4), seed=6, n_paths=100_000)
    z = np.sort(e.at(t)[:, 0])
    grid = np.linspace(0, 1, 2001)
    dens = heat_kernel(g, t, x, grid) * heat_kernel(g, 1 - t, grid, y) / heat_kernel(g, 1.0, x, y)
    cdf = np.concatenate([[0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    assert cdf[-1] == pytest.approx(1.0, abs=1e-6)
    d = stats.kstest(z, lambda s: np.interp(s, grid, cdf)).statistic
    assert d < 0.01


# ---------------------------------------------------------------- candidates


def test_candidate_requires_midpoint():
    with pytest.raises(ConfigurationError):
        build_candidate(torus(1.0, 1.0), lazy_coupling(torus(1.0, 1.0), 4), 10, TimeGrid.uniform(3))


def test_candidate_endpoint_tv():
    g = torus(1.0, 1.0)
    pi = lazy_coupling(g, 4)
    e = build_candidate(g, pi, 100_000, TimeGrid.uniform(4), seed=8)
    emp = endpoint_histogram(e, 4)
    assert 0.5 * np.abs(emp - pi.matrix).sum() < 0.02


def test_candidate_midpoint_uniform_regardless_of_pi():
    g = torus(1.0, 1.0)
    diag = Coupling.diagonal(g, 4)
    e = build_candidate(g, diag, 50_000, TimeGrid.uniform(2), seed=9)
    h = marginal_histogram(e, 0.5, 4).masses
    counts = h * e.n_paths
    chi2 = ((counts - e.n_paths / 16) ** 2 / (e.n_paths / 16)).sum()
    assert chi2 < stats.chi2.ppf(0.999, 15)


def test_markov_gluing_uncorrelated():
    g = circle(1.0)
    n = 50_000
    e = build_candidate(g, lazy_coupling(g, 8), n, TimeGrid.uniform(8), seed=10)
    k = e.grid.index(0.5)
    inc = np.diff(e.positions[:, :, 0], axis=1)
    inc -= np.round(inc)
    rho = np.corrcoef(inc[:, k - 1], inc[:, k])[0, 1]
    assert abs(rho) < 3 / np.sqrt(n)


def test_gaussian_variance_identity():
    for t in np.linspace(0, 0.5, 6):
        var = (1 - 2 * t) ** 2 * 0.25 + (2 * t) ** 2 * 0.25 + t * (1 - 2 * t)
        assert var == pytest.approx(0.25, abs=1e-12)
        assert gaussian_marginal_variance(t) == pytest.approx(0.25, abs=1e-12)


def test_gaussian_candidate_variance_mc():
    e = build_gaussian_candidate(2, gaussian_coupling(2, 0.5), 100_000, TimeGrid.uniform(10), seed=11)
    v = e.at(0.3).var(0).mean()
    assert 0.2475 <= v <= 0.2525


def test_gaussian_candidate_start_is_first_marginal():
    e = build_gaussian_candidate(1, gaussian_coupling(1, 0.0), 5000, TimeGrid.uniform(2), seed=12)
    # X_0 is the first coordinate of the coupling sample, law N(0, 1/4)
    assert stats.kstest(e.at(0.0)[:, 0], "norm", args=(0, 0.5)).pvalue > 1e-3


# ---------------------------------------------------------------- folding


def test_fold_of_candidate_has_uniform_marginals():
    q = box_quotient(torus(2.0, 2.0))
    n = 50_000
    pi = Coupling(np.full((64, 64), 1 / 64**2), (8, 8), q.covering)
    e = fold_ensemble(build_candidate(q.covering, pi, n, TimeGrid.uniform(4), seed=13), q)
    for t in [0.25, 0.75]:
        counts = marginal_histogram(e, t, 4).masses * n
        chi2 = ((counts - n / 16) ** 2 / (n / 16)).sum()
        assert chi2 < stats.chi2.ppf(0.999, 15)


def test_fold_inside_domain_is_identity():
    q = box_quotient(torus(2.0, 2.0))
    rng = np.random.default_rng(0)
    pos = rng.uniform(0.01, 0.99, (10, 3, 2))
    e = PathEnsemble(TimeGrid.uniform(2), pos, q.covering)
    np.testing.assert_array_equal(fold_ensemble(e, q).positions, pos)


def test_fold_commutes_with_sampling():
    q = box_quotient(torus(2.0, 2.0))
    grid = TimeGrid.uniform(10)
    n = 100_000
    a = fold_ensemble(sample_reflected_bm(q.covering, "uniform", grid, seed=14, n_paths=n), q)
    b = sample_reflected_bm(q.quotient, "uniform", grid, seed=15, n_paths=n)
    for t in [0.3, 1.0]:
        for ax in range(2):
            assert stats.ks_2samp(a.at(t)[:, ax], b.at(t)[:, ax]).statistic < 0.02


def test_tube_occupation_bounds():
    e = sample_reflected_bm(box(1.0, 1.0), "uniform", TimeGrid.uniform(20), seed=16, n_paths=1000)
    occ = tube_occupation(e, 0.05)
    assert ((occ >= 0) & (occ <= 1)).all()


# ---------------------------------------------------------------- histograms


def test_histogram_normalised_and_binomial():
    rng = np.random.default_rng(17)
    pos = rng.uniform(0, 1, (1_000_000, 1, 1))
    e = PathEnsemble(TimeGrid(np.array([0.0])), pos, circle(1.0))
    h = marginal_histogram(e, 0.0, 4)
    assert h.masses.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(h.masses, 0.25, atol=0.002)


def test_single_path_histogram_is_indicator():
    e = PathEnsemble(TimeGrid(np.array([0.0, 1.0])), np.array([[[0.1], [0.6]]]), circle(1.0))
    np.testing.assert_array_equal(marginal_histogram(e, 1.0, 4).masses, [0, 0, 1, 0])


def test_histogram_respects_weights():
    pos = np.array([[[0.1]], [[0.6]]])
    e = PathEnsemble(TimeGrid(np.array([0.0])), pos, circle(1.0), weights=np.array([3.0, 1.0]))
    np.testing.assert_allclose(marginal_histogram(e, 0.0, 2).masses, [0.75, 0.25])


def test_histogram_rejects_off_grid_time():
    e = PathEnsemble(TimeGrid(np.array([0.0, 1.0])), np.zeros((1, 2, 1)), circle(1.0))
    with pytest.raises(ConfigurationError):
        marginal_histogram(e, 0.5, 4)


def test_grid_measure_validation():
    with pytest.raises(ValueError):
        GridMeasure(np.array([0.5, 0.6]), (2,), circle(1.0))
