"""
Nelson velocities, local time and the continuity equation.

Velocities are conditional means of one-step displacements divided by the
step. They can be estimated from a PathEnsemble (binning) or computed
exactly from a DiscretePathMeasure, where the conditional expectations are
finite sums; the exact route is the infinite-sample limit of the same
estimator and is used whenever Monte Carlo noise would swamp the quantity
being tested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (FlatGeometry, Kind, QuotientMap, UnsupportedGeometryError,
                       _cells_tuple, cell_centers, cell_index, log_map_masked)
from .measures import GridMeasure, VelocityField
from .sampling import PathEnsemble, TimeGrid

MIN_COUNT = 10


class InsufficientDataError(ValueError):
    """No cell received enough samples."""


def _state(e_or_g) -> FlatGeometry:
    g = getattr(e_or_g, "geometry", e_or_g)
    return g.quotient if isinstance(g, QuotientMap) else g


def _bin_axes(g: FlatGeometry, cells, bounds=None) -> tuple[np.ndarray, ...]:
    cells = _cells_tuple(cells, g.dim)
    if bounds is None:
        if not g.compact:
            raise UnsupportedGeometryError("Euclidean bins need bounds")
        lo, hi = np.zeros(g.dim), g.length_array
    else:
        lo, hi = (np.asarray(b, float) for b in bounds)
    return tuple(lo[i] + (np.arange(n) + 0.5) * (hi[i] - lo[i]) / n for i, n in enumerate(cells))


def _boundary_distance(x: np.ndarray, g: FlatGeometry) -> np.ndarray:
    if not g.has_boundary:
        return np.full(x.shape[:-1], np.inf)
    L = g.length_array
    return np.minimum(x, L - x).min(-1)


def _displacement(x0, x1, g: FlatGeometry):
    if g.periodic:
        return log_map_masked(x0, x1, g)
    return x1 - x0, np.ones(x0.shape[:-1], dtype=bool)


def _binned_means(idx, disp, weights, n_bins, dim):
    cnt = np.bincount(idx, minlength=n_bins)
    wsum = np.bincount(idx, weights=weights, minlength=n_bins)
    safe = np.where(wsum > 0, wsum, 1.0)
    mean = np.stack([np.bincount(idx, weights=weights * disp[:, d], minlength=n_bins)
                     for d in range(dim)], -1) / safe[:, None]
    sq = np.stack([np.bincount(idx, weights=weights * disp[:, d] ** 2, minlength=n_bins)
                   for d in range(dim)], -1) / safe[:, None]
    var = np.maximum(sq - mean**2, 0.0)
    se = np.sqrt(var / np.maximum(cnt, 1)[:, None])
    return cnt, mean, se


def estimate_forward_velocity(e: PathEnsemble, bins, exclusion_radius: float | None = None,
                              bounds=None, min_count: int = MIN_COUNT) -> VelocityField:
    """Binned ``E[log_{X_t} X_{t+h} | X_t] / h`` on every step of the grid.

    Paths closer than ``exclusion_radius`` (default ``2 sqrt(h)``) to the
    boundary are skipped, as are displacements on the cut locus. Cells with
    fewer than ``min_count`` samples are NaN.
    """
    g = _state(e)
    cells = _cells_tuple(bins, g.dim)
    axes = _bin_axes(g, cells, bounds)
    n_bins = int(np.prod(cells))
    times = e.times
    T = times.size - 1
    vals = np.full((T, n_bins, g.dim), np.nan)
    ses = np.full((T, n_bins, g.dim), np.nan)
    counts = np.zeros((T, n_bins), dtype=np.int64)
    for k in range(T):
        h = times[k + 1] - times[k]
        x0, x1 = e.positions[:, k], e.positions[:, k + 1]
        disp, ok = _displacement(x0, x1, g)
        radius = 2 * math.sqrt(h) if exclusion_radius is None else exclusion_radius
        ok &= _boundary_distance(x0, g) >= radius
        idx = cell_index(x0[ok], g, cells, bounds)
        cnt, mean, se = _binned_means(idx, disp[ok] / h, e.weights[ok], n_bins, g.dim)
        good = cnt >= min_count
        vals[k][good] = mean[good]
        ses[k][good] = se[good]
        counts[k] = cnt
    if not np.any(counts >= min_count):
        raise InsufficientDataError("no cell has enough samples")
    shape = (T,) + cells
    return VelocityField(times[:-1], axes, vals.reshape(shape + (g.dim,)), g,
                         counts.reshape(shape), ses.reshape(shape + (g.dim,)),
                         {"kind": "forward"})


def reverse_ensemble(e: PathEnsemble) -> PathEnsemble:
    """Time reversal ``X_t -> X_{1-t}``; involutive bit for bit."""
    prev = e.meta.get("_reversal_of")
    grid = prev if prev is not None else e.grid.reversed()
    meta = {k: v for k, v in e.meta.items() if k != "_reversal_of"}
    if prev is None:
        meta["_reversal_of"] = e.grid
    meta["reversed"] = not e.meta.get("reversed", False)
    return PathEnsemble(grid, e.positions[:, ::-1], e.geometry, e.weights, e.seed, meta)


def _reverse_field(f: VelocityField, times: np.ndarray, kind: str) -> VelocityField:
    stderr = None if f.stderr is None else f.stderr[::-1]
    counts = None if f.counts is None else f.counts[::-1]
    return VelocityField(times, f.axes, -f.values[::-1], f.geometry, counts, stderr,
                         {"kind": kind})


def estimate_backward_velocity(e: PathEnsemble, bins, exclusion_radius: float | None = None,
                               bounds=None, min_count: int = MIN_COUNT) -> VelocityField:
    """``-`` forward velocity of the reversed ensemble, read at mirrored times."""
    f = estimate_forward_velocity(reverse_ensemble(e), bins, exclusion_radius, bounds, min_count)
    return _reverse_field(f, e.times[1:], "backward")


def current_velocity(f: VelocityField, b: VelocityField) -> VelocityField:
    """``(v_forward + v_backward) / 2`` on the times both fields share."""
    if not f.same_space(b):
        raise ValueError("velocity fields live on different spatial grids")
    common = [t for t in f.times if np.any(np.abs(b.times - t) <= 1e-12)]
    if not common:
        raise ValueError("velocity fields share no time")
    fi = [f.time_index(t) for t in common]
    bi = [b.time_index(t) for t in common]
    vals = 0.5 * (f.values[fi] + b.values[bi])
    counts = None
    if f.counts is not None and b.counts is not None:
        counts = np.minimum(f.counts[fi], b.counts[bi])
    stderr = None
    if f.stderr is not None and b.stderr is not None:
        stderr = 0.5 * np.sqrt(f.stderr[fi] ** 2 + b.stderr[bi] ** 2)
    return VelocityField(np.array(common), f.axes, vals, f.geometry, counts, stderr,
                         {"kind": "current"})


# ---------------------------------------------------------------------------
# exact velocities of discrete measures


def _cell_displacements(g: FlatGeometry, cells):
    c = cell_centers(g, cells)
    d, ok = _displacement(c[:, None], c[None], g)
    return c, d, ok


def exact_velocities(m, exclusion_radius: float = 0.0) -> tuple[VelocityField, VelocityField]:
    """Forward and backward velocities of a DiscretePathMeasure, cell by cell.

    Same estimator as the binned one, with exact conditional expectations.
    Cut-locus pairs are dropped and the conditional mean renormalised over
    the remaining mass.
    """
    g, cells = m.geometry, m.cells
    centers, d, ok = _cell_displacements(g, cells)
    near = _boundary_distance(centers, g) < exclusion_radius
    times = m.grid.times
    T = m.T
    fwd = np.full((T, centers.shape[0], g.dim), np.nan)
    bwd = np.full((T, centers.shape[0], g.dim), np.nan)
    okf = ok.astype(float)
    for k in range(T):
        h = times[k + 1] - times[k]
        P = m.transition_joint(k) * okf
        mass = P.sum(1)
        with np.errstate(invalid="ignore", divide="ignore"):
            fwd[k] = np.einsum("ij,ijd->id", P, d) / mass[:, None] / h
        fwd[k][near | (mass <= 0)] = np.nan
        # backward at time k+1: E[X_{k+1} - X_k | X_{k+1}] / h
        mass_b = P.sum(0)
        with np.errstate(invalid="ignore", divide="ignore"):
            bwd[k] = np.einsum("ij,ijd->jd", P, d) / mass_b[:, None] / h
        bwd[k][near | (mass_b <= 0)] = np.nan
    axes = _bin_axes(g, cells)
    shape = tuple(cells)
    f = VelocityField(times[:-1], axes, fwd.reshape((T,) + shape + (g.dim,)), g,
                      meta={"kind": "forward", "exact": True})
    b = VelocityField(times[1:], axes, bwd.reshape((T,) + shape + (g.dim,)), g,
                      meta={"kind": "backward", "exact": True})
    return f, b


def start_conditioned_kinetic_energy(m, paths=None) -> float:
    """``(1/2) E[sum_t |zeta_t|^2 h]`` with the drift conditioned on ``(X_0, X_t)``.

    Given ``X_0`` the discrete solution is a Markov chain, so the drift of
    the full filtration is the conditional mean displacement given the
    start cell and the current cell. With ``paths`` (cell-index paths of
    shape ``(n, T + 1)``) the expectation is a sample average, otherwise it
    is summed exactly.
    """
    g, cells = m.geometry, m.cells
    _, d, ok = _cell_displacements(g, cells)
    okf = ok.astype(float)
    times = m.grid.times
    B, _ = m.backward()
    w, _ = m._w()
    F, _ = m.forward()
    total = np.zeros(len(paths)) if paths is not None else 0.0
    for k in range(m.T):
        h = times[k + 1] - times[k]
        a, _ = m._a(k + 1)
        Hn = B[k + 1] @ w.T                       # [z, z0]
        # transition given (z0, z): K[z, j] a[j] Hn[j, z0], normalised over j
        K = m.kernels[k]
        W = K[None, :, :] * a[None, None, :] * Hn.T[:, None, :]   # [z0, z, j]
        norm = W.sum(-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            P = W / norm
            Pk = P * okf[None]
            drift = np.einsum("azj,zjd->azd", Pk, d) / Pk.sum(-1)[..., None] / h
        sq = np.nan_to_num(np.sum(drift**2, -1))          # [z0, z]
        if paths is None:
            J = m.start_joint(k)
            total += 0.5 * float(np.sum(J * sq)) * h
        else:
            total = total + 0.5 * sq[paths[:, 0], paths[:, k]] * h
    return float(np.mean(total)) if paths is not None else total


def sampled_kinetic_energy(e: PathEnsemble, cells) -> dict:
    """Start-conditioned kinetic energy from raw paths.

    Displacements are binned by ``(cell of X_0, cell of X_t)``; the squared
    bin means are debiased by their sampling variance before averaging.
    Returns the total and the per-step contributions.
    """
    g = _state(e)
    cells = _cells_tuple(cells, g.dim)
    n_cells = int(np.prod(cells))
    times = e.times
    start = cell_index(e.positions[:, 0], g, cells)
    per_step = []
    for k in range(times.size - 1):
        h = times[k + 1] - times[k]
        x0, x1 = e.positions[:, k], e.positions[:, k + 1]
        disp, ok = _displacement(x0, x1, g)
        idx = start * n_cells + cell_index(x0, g, cells)
        idx, disp = idx[ok], disp[ok] / h
        cnt = np.bincount(idx, minlength=n_cells**2).astype(float)
        s1 = np.stack([np.bincount(idx, disp[:, j], n_cells**2) for j in range(g.dim)], -1)
        s2 = np.stack([np.bincount(idx, disp[:, j] ** 2, n_cells**2) for j in range(g.dim)], -1)
        use = cnt >= 2
        mean = s1[use] / cnt[use, None]
        var = (s2[use] - cnt[use, None] * mean**2) / (cnt[use, None] - 1)
        unbiased = np.sum(mean**2 - var / cnt[use, None], -1)
        per_step.append(0.5 * h * float(np.sum(cnt[use] * unbiased)) / e.n_paths)
    return {"estimate": float(np.sum(per_step)), "per_step": per_step}


# ---------------------------------------------------------------------------
# local time


@dataclass(frozen=True)
class LocalTimeEstimate:
    """``eps``-tube occupation scaled by ``1/(2 eps)``.

    ``rates[k]`` estimates the local-time rate at grid time ``k``;
    ``surface_weights`` distributes the tube mass over boundary faces
    (ordered ``low_0, high_0, low_1, high_1, ...``).
    """

    eps: float
    times: np.ndarray
    rates: np.ndarray
    surface_weights: np.ndarray

    @property
    def mean_rate(self) -> float:
        return float(np.mean(self.rates))


def estimate_local_time(e: PathEnsemble, eps: float) -> LocalTimeEstimate:
    g = _state(e)
    if not g.has_boundary:
        raise UnsupportedGeometryError("local time needs a boundary")
    if not 0 < eps < g.length_array.min() / 4:
        raise ValueError("eps must lie in (0, min side / 4)")
    x = e.positions
    L = g.length_array
    faces = np.concatenate([np.stack([x[..., i], L[i] - x[..., i]], -1) for i in range(g.dim)],
                           -1)                                     # (n, T+1, 2 dim)
    in_tube = faces.min(-1) < eps
    rates = np.einsum("n,nk->k", e.weights, in_tube.astype(float)) / (2 * eps)
    nearest = faces.argmin(-1)
    hits = np.zeros(2 * g.dim)
    for f in range(2 * g.dim):
        hits[f] = np.sum(e.weights[:, None] * (in_tube & (nearest == f)))
    weights = hits / hits.sum() if hits.sum() > 0 else hits
    return LocalTimeEstimate(eps, e.times.copy(), rates, weights)


# ---------------------------------------------------------------------------
# continuity equation


def weak_form_modes(g: FlatGeometry, max_mode: int = 2):
    """Low modes as ``(f, grad f, sup |grad f|)`` triples.

    Fourier modes on tori, Neumann cosine products on boxes.
    """
    L = g.length_array
    out = []
    ranges = [range(-max_mode, max_mode + 1) if g.periodic else range(0, max_mode + 1)
              for _ in range(g.dim)]
    for k in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(g.dim, -1).T:
        if not np.any(k):
            continue
        if g.periodic:
            if tuple(-k) < tuple(k):
                continue
            w = 2 * np.pi * k / L
            norm = float(np.linalg.norm(w))
            out.append((lambda x, w=w: np.cos(x @ w),
                        lambda x, w=w: -np.sin(x @ w)[..., None] * w, norm))
            out.append((lambda x, w=w: np.sin(x @ w),
                        lambda x, w=w: np.cos(x @ w)[..., None] * w, norm))
        else:
            w = np.pi * k / L

            def f(x, w=w):
                return np.prod(np.cos(x * w), -1)

            def grad(x, w=w):
                c = np.cos(x * w)
                s = np.sin(x * w)
                cols = []
                for i in range(len(w)):
                    others = np.prod(np.delete(c, i, axis=-1), -1) if len(w) > 1 else 1.0
                    cols.append(-w[i] * s[..., i] * others)
                return np.stack(cols, -1)
            out.append((f, grad, float(np.linalg.norm(w))))
    return out


def continuity_residual(histograms, times, v: VelocityField, max_mode: int = 2) -> dict:
    """Weak-form residual of ``d/dt mu_t + div(mu_t v) = 0`` at interior times.

    For every test function ``f`` and interior time ``t_k`` at which ``v`` is
    defined, the residual is
    ``|(mu_{k+1}(f) - mu_{k-1}(f)) / (t_{k+1} - t_{k-1}) - mu_k(<grad f, v_k>)|``
    divided by ``sup |grad f|``; the maximum over test functions is reported.

    Parameters
    ----------
    histograms : sequence of GridMeasure
        Marginals on a common grid, one per entry of ``times``.
    times : array_like
    v : VelocityField
        Current velocity on the same spatial grid as the histograms.
    """
    times = np.asarray(times, float)
    if len(histograms) != times.size:
        raise ValueError("need one histogram per time")
    h0 = histograms[0]
    for h in histograms:
        if not h.same_grid(h0):
            raise ValueError("histograms use different grids")
    if v.grid_shape != h0.cells:
        raise ValueError("velocity and histograms use different spatial grids")
    x = h0.centers()
    funcs = weak_form_modes(h0.geometry, max_mode)
    fvals = np.stack([f(x) for f, _, _ in funcs])                 # (F, N)
    grads = np.stack([gr(x) for _, gr, _ in funcs])               # (F, N, dim)
    norms = np.array([n for _, _, n in funcs])
    res_t, res = [], []
    for k in range(1, times.size - 1):
        try:
            kv = v.time_index(times[k])
        except ValueError:
            continue
        vel = np.nan_to_num(v.values[kv].reshape(-1, v.dim))
        dmu = (fvals @ histograms[k + 1].masses - fvals @ histograms[k - 1].masses) / \
            (times[k + 1] - times[k - 1])
        flux = np.einsum("n,fnd,nd->f", histograms[k].masses, grads, vel)
        res_t.append(float(times[k]))
        res.append(float(np.max(np.abs(dmu - flux) / norms)))
    return {"times": res_t, "residual": res}


def uniform_histograms(g: FlatGeometry, cells, n: int) -> list[GridMeasure]:
    return [GridMeasure.uniform(g, cells) for _ in range(n)]


def constant_field(g: FlatGeometry, cells, times, vector) -> VelocityField:
    """Spatially constant field (divergence free on any torus)."""
    cells = _cells_tuple(cells, g.dim)
    axes = _bin_axes(g, cells)
    vals = np.broadcast_to(np.asarray(vector, float), (len(times),) + cells + (g.dim,)).copy()
    return VelocityField(np.asarray(times, float), axes, vals, g, meta={"kind": "analytic"})


def linear_field(g: FlatGeometry, cells, times, rate: float = 1.0) -> VelocityField:
    """``v(x) = rate (x - centre)``, divergence ``rate * dim`` (compressible control)."""
    cells = _cells_tuple(cells, g.dim)
    axes = _bin_axes(g, cells)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    vals = np.broadcast_to(rate * (mesh - g.length_array / 2), (len(times),) + cells + (g.dim,))
    return VelocityField(np.asarray(times, float), axes, vals.copy(), g, meta={"kind": "analytic"})


def divergence_l1(v: VelocityField, k: int, reference: VelocityField | None = None) -> float:
    """Relative L1 norm of the central-difference divergence at time index ``k``.

    Parameters
    ----------
    v : VelocityField
        Field whose divergence is measured.
    k : int
        Time index.
    reference : VelocityField, optional
        Field supplying the magnitude scale. Defaults to ``v``; pass the
        forward velocity when ``v`` itself is expected to vanish.
    """
    vals = v.values[k]
    div = np.zeros(vals.shape[:-1])
    for i, a in enumerate(v.axes):
        h = a[1] - a[0]
        comp = vals[..., i]
        if v.geometry.periodic:
            div += (np.roll(comp, -1, axis=i) - np.roll(comp, 1, axis=i)) / (2 * h)
        else:
            div += np.gradient(comp, h, axis=i)
    scale = vals if reference is None else reference.values[k]
    mag = np.nanmean(np.linalg.norm(scale, axis=-1))
    L = v.geometry.length_array if v.geometry.compact else np.ones(v.dim)
    return float(np.nanmean(np.abs(div)) * L.mean() / max(mag, 1e-300))
