"""
Exact-in-law samplers for (reflected) Brownian motion and its bridges, and
the glued-bridge candidate path measures.

Reflection is never simulated with an Euler step. Paths are drawn on the
covering torus, where increments are free Gaussians, and then folded back;
for the box this is exact because the folded torus motion *is* reflected
Brownian motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .geometry import (DEFAULT_KERNEL, FlatGeometry, GeometryError, HeatKernelParams, Kind,
                       QuotientMap, UnsupportedGeometryError, _cells_tuple, _fold_box, _wrap,
                       as_points, box_quotient, cell_index, cell_kernel, contains)
from .measures import Coupling, GridMeasure

BLOCK_SIZE = 4096
GRID_ATOL = 1e-12

Space = Union[FlatGeometry, QuotientMap]


class ConfigurationError(ValueError):
    """Inputs are inconsistent with the requested construction."""


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing nonnegative times.

    Path-measure constructions work on ``[0, 1]`` and check ``spans_unit``;
    free reference samplers accept any horizon.
    """

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        if t.size < 1:
            raise ConfigurationError("a time grid needs at least one time")
        if np.any(np.diff(t) <= 0):
            raise ConfigurationError("times must be strictly increasing")
        if t[0] < -GRID_ATOL:
            raise ConfigurationError("times must be nonnegative")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, steps: int, t0: float = 0.0, t1: float = 1.0) -> "TimeGrid":
        return cls(np.linspace(t0, t1, steps + 1))

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other) -> bool:
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __hash__(self) -> int:
        return hash(self.times.tobytes())

    @property
    def spans_unit(self) -> bool:
        return abs(self.times[0]) <= GRID_ATOL and abs(self.times[-1] - 1) <= GRID_ATOL

    def index(self, t: float) -> int:
        """Index of grid time ``t``; off-grid times are refused."""
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > GRID_ATOL:
            raise ConfigurationError(f"t={t} is not a grid time")
        return k

    def reversed(self) -> "TimeGrid":
        """Mirror image ``t0 + t1 - t``; on ``[0, 1]`` this is ``1 - t``."""
        return TimeGrid(self.times[0] + self.times[-1] - self.times[::-1])


@dataclass(frozen=True)
class PathSample:
    """A single gridded path."""

    grid: TimeGrid
    positions: np.ndarray
    geometry: Space


@dataclass(frozen=True)
class PathEnsemble:
    """Weighted collection of paths on a shared time grid.

    ``positions`` has shape ``(n_paths, n_times, dim)``.
    """

    grid: TimeGrid
    positions: np.ndarray
    geometry: Space
    weights: np.ndarray | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 3 or pos.shape[1] != len(self.grid):
            raise ConfigurationError("positions must have shape (n_paths, n_times, dim)")
        object.__setattr__(self, "positions", pos)
        n = pos.shape[0]
        w = np.full(n, 1.0 / n) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (n,) or np.any(w < 0):
            raise ConfigurationError("weights must be nonnegative, one per path")
        s = w.sum()
        if not s > 0:
            raise ConfigurationError("weights must have positive mass")
        object.__setattr__(self, "weights", w / s)

    @property
    def n_paths(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def at(self, t: float) -> np.ndarray:
        return self.positions[:, self.grid.index(t)]

    def path(self, i: int) -> PathSample:
        return PathSample(self.grid, self.positions[i], self.geometry)


# ---------------------------------------------------------------------------
# randomness


def _blocks(n: int, seed):
    """Yield ``(slice, Generator)`` pairs; one child stream per block of paths."""
    n_blocks = max(1, math.ceil(n / BLOCK_SIZE))
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    for b, child in enumerate(children):
        yield slice(b * BLOCK_SIZE, min(n, (b + 1) * BLOCK_SIZE)), np.random.default_rng(child)


# ---------------------------------------------------------------------------
# covering-space data


@dataclass(frozen=True)
class _Cover:
    lengths: np.ndarray
    elements: tuple
    fold: object
    quotient: QuotientMap | None


def _cover(g: Space) -> _Cover | None:
    if isinstance(g, QuotientMap):
        return _Cover(g.covering.length_array, g.group.elements,
                      lambda p: np.asarray(g.fold(p)).reshape(p.shape), g)
    if g.kind is Kind.GAUSSIAN:
        return None
    if g.periodic:
        from .geometry import identity_isometry
        L = g.length_array
        return _Cover(L, (identity_isometry(g.dim),), lambda p: _wrap(p, L), None)
    q = box_quotient(g.covering())
    L = g.length_array
    return _Cover(q.covering.length_array, q.group.elements, lambda p: _fold_box(p, L), q)


def _dim(g: Space) -> int:
    return g.dim


def _state_geometry(g: Space) -> FlatGeometry:
    return g.quotient if isinstance(g, QuotientMap) else g


def _uniform_points(g: Space, n: int, rng: np.random.Generator) -> np.ndarray:
    cov = _cover(g)
    if cov is None:
        raise UnsupportedGeometryError("no uniform law on Euclidean space")
    return cov.fold(rng.random((n, len(cov.lengths))) * cov.lengths)


def _check_points(x: np.ndarray, g: Space):
    if isinstance(g, QuotientMap):
        ok = g.in_fundamental_domain(x, 1e-9)
    else:
        ok = contains(x, g, 1e-9)
    if not np.all(ok):
        raise GeometryError("start point outside the state space")


# ---------------------------------------------------------------------------
# reflected Brownian motion


def sample_reflected_bm(g: Space, x0, grid: TimeGrid, seed=None, n_paths: int = 1,
                        method: str = "fold") -> PathEnsemble:
    """Brownian motion with generator ``Delta/2``, reflected at any boundary.

    Parameters
    ----------
    g : FlatGeometry or QuotientMap
    x0 : array_like or "uniform"
        Common start point, one start point per path, or ``"uniform"`` for
        the stationary law ``vol``.
    grid : TimeGrid
    seed : int, optional
    n_paths : int
    method : {"fold", "reflect"}
        ``fold`` accumulates free increments on the covering torus and folds
        the whole path. ``reflect`` folds after every step; both are exact,
        the second one never leaves the quotient.
    """
    if method not in ("fold", "reflect"):
        raise ConfigurationError(f"unknown method {method!r}")
    dim = _dim(g)
    dt = np.diff(grid.times)
    cov = _cover(g)
    out = np.empty((n_paths, len(grid), dim))
    uniform = isinstance(x0, str)
    if uniform and x0 != "uniform":
        raise ConfigurationError("x0 must be a point, an array of points or 'uniform'")
    if not uniform:
        start = as_points(x0, dim)
        if start.ndim == 1:
            start = np.broadcast_to(start, (n_paths, dim))
        if start.shape != (n_paths, dim):
            raise ConfigurationError("need one start point per path")
        if cov is not None:
            _check_points(start, g)
    for sl, rng in _blocks(n_paths, seed):
        m = sl.stop - sl.start
        x = _uniform_points(g, m, rng) if uniform else np.array(start[sl], dtype=float)
        inc = rng.standard_normal((m, dt.size, dim)) * np.sqrt(dt)[None, :, None]
        if cov is None:
            path = np.concatenate([x[:, None], x[:, None] + np.cumsum(inc, axis=1)], axis=1)
        elif method == "fold":
            path = np.concatenate([x[:, None], x[:, None] + np.cumsum(inc, axis=1)], axis=1)
            path = cov.fold(path)
        else:
            path = np.empty((m, len(grid), dim))
            path[:, 0] = x
            for k in range(dt.size):
                path[:, k + 1] = cov.fold(path[:, k] + inc[:, k])
        out[sl] = path
    return PathEnsemble(grid, out, g, seed=seed, meta={"kind": "reflected_bm", "method": method})


# ---------------------------------------------------------------------------
# bridges


def choose_images(g: Space, x, y, tau: float, rng: np.random.Generator,
                  params: HeatKernelParams = DEFAULT_KERNEL):
    """Pick a covering-space image of ``y`` for a bridge of duration ``tau`` from ``x``.

    The image ``h . y + k L`` is drawn with probability proportional to the
    free Gaussian density of its displacement from ``x``. The sum over
    windings ``k`` factorises per axis, so the group element is drawn first
    and the windings afterwards.

    Returns
    -------
    group_index : ndarray of int, shape (n,)
    windings : ndarray of int, shape (n, dim)
    target : ndarray, shape (n, dim)
        Unwrapped covering-space endpoint.
    """
    cov = _cover(g)
    if cov is None:
        raise UnsupportedGeometryError("Euclidean bridges need no image choice")
    x = np.atleast_2d(as_points(x, len(cov.lengths)))
    y = np.atleast_2d(as_points(y, len(cov.lengths)))
    x, y = np.broadcast_arrays(x, y)
    n, dim = x.shape
    L = cov.lengths
    K = max(params.n_images(tau, float(v)) for v in L) + 1
    ks = np.arange(-K, K + 1)
    imgs = np.stack([h.apply(y, L) for h in cov.elements])          # (G, n, dim)
    disp = imgs[..., None] + ks * L[None, None, :, None] - x[None, ..., None]
    logw = -disp**2 / (2 * tau)                                      # (G, n, dim, 2K+1)
    shift = logw.max(axis=-1, keepdims=True)
    axis_w = np.exp(logw - shift)
    axis_sum = axis_w.sum(-1)
    log_group = (np.log(axis_sum) + shift[..., 0]).sum(-1)           # (G, n)
    log_group -= log_group.max(axis=0)
    pg = np.exp(log_group)
    pg /= pg.sum(axis=0)
    u = rng.random(n)
    gi = np.minimum((np.cumsum(pg, axis=0) < u).sum(0), len(cov.elements) - 1)
    rows = np.arange(n)
    pk = axis_w[gi, rows] / axis_sum[gi, rows][..., None]            # (n, dim, 2K+1)
    v = rng.random((n, dim))
    ki = np.minimum((np.cumsum(pk, axis=-1) < v[..., None]).sum(-1), ks.size - 1)
    windings = ks[ki]
    target = imgs[gi, rows] + windings * L
    return gi, windings, target


def _free_bridge(x: np.ndarray, target: np.ndarray, times: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
    """Brownian bridge from ``x`` at ``times[0]`` to ``target`` at ``times[-1]``."""
    n, dim = x.shape
    out = np.empty((n, times.size, dim))
    out[:, 0] = x
    cur = x.astype(float)
    t1 = times[-1]
    for k in range(1, times.size - 1):
        s, t = times[k - 1], times[k]
        dt, rem = t - s, t1 - s
        mean = cur + (target - cur) * (dt / rem)
        var = dt * (t1 - t) / rem
        cur = mean + math.sqrt(var) * rng.standard_normal((n, dim))
        out[:, k] = cur
    out[:, -1] = target
    return out


def _bridge_block(g: Space, x: np.ndarray, y: np.ndarray, times: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    tau = times[-1] - times[0]
    cov = _cover(g)
    if cov is None:
        path = _free_bridge(x, y, times, rng)
    else:
        _, _, target = choose_images(g, x, y, tau, rng)
        path = cov.fold(_free_bridge(x, target, times, rng))
    path[:, 0] = x
    path[:, -1] = y
    return path


def sample_bridge(g: Space, x, y, t0: float, t1: float, grid: TimeGrid, seed=None,
                  n_paths: int = 1) -> PathEnsemble:
    """Bridges of the reference motion pinned at ``x`` (time ``t0``) and ``y`` (time ``t1``).

    The returned ensemble lives on the grid times in ``[t0, t1]``; ``t0``
    and ``t1`` must both be grid times.
    """
    if not t0 < t1:
        raise ConfigurationError("bridge needs t0 < t1")
    i0, i1 = grid.index(t0), grid.index(t1)
    times = grid.times[i0:i1 + 1]
    dim = _dim(g)
    px = np.broadcast_to(as_points(x, dim), (n_paths, dim))
    py = np.broadcast_to(as_points(y, dim), (n_paths, dim))
    if _cover(g) is not None:
        _check_points(px, g)
        _check_points(py, g)
    out = np.empty((n_paths, times.size, dim))
    for sl, rng in _blocks(n_paths, seed):
        out[sl] = _bridge_block(g, px[sl], py[sl], times, rng)
    return PathEnsemble(TimeGrid(times), out, g, seed=seed, meta={"kind": "bridge"})


# ---------------------------------------------------------------------------
# candidate measures


def _glue(g: Space, x, z, y, grid: TimeGrid, rng) -> np.ndarray:
    k = grid.index(0.5)
    t = grid.times
    first = _bridge_block(g, x, z, t[:k + 1], rng)
    second = _bridge_block(g, z, y, t[k:], rng)
    return np.concatenate([first, second[:, 1:]], axis=1)


def _check_candidate_grid(grid: TimeGrid):
    if not grid.spans_unit:
        raise ConfigurationError("candidate grids must run from 0 to 1")
    try:
        grid.index(0.5)
    except ConfigurationError:
        raise ConfigurationError("candidate grids must contain t = 1/2") from None


def build_candidate(g: Space, pi: Coupling, n_paths: int, grid: TimeGrid,
                    seed=None) -> PathEnsemble:
    """Glued-bridge candidate: ``(x, y) ~ pi``, ``z ~ vol``, bridge ``x -> z -> y``.

    For a quotient map the coupling lives on the quotient box grid and its
    samples are folded into the fundamental domain.
    """
    _check_candidate_grid(grid)
    state = _state_geometry(g)
    if state.kind is Kind.GAUSSIAN:
        raise UnsupportedGeometryError("use build_gaussian_candidate on Euclidean space")
    if pi.geometry != state:
        raise ConfigurationError("coupling geometry does not match the state space")
    cov = _cover(g)
    out = np.empty((n_paths, len(grid), state.dim))
    for sl, rng in _blocks(n_paths, seed):
        m = sl.stop - sl.start
        x, y = pi.sample(m, rng)
        if isinstance(g, QuotientMap):
            x, y = cov.fold(x), cov.fold(y)
        z = _uniform_points(g, m, rng)
        out[sl] = _glue(g, x, z, y, grid, rng)
    return PathEnsemble(grid, out, g, seed=seed, meta={"kind": "candidate", "coupling": pi.label})


def gaussian_coupling(n: int, rho: float = 0.0, scale: float = 0.25) -> Coupling:
    """Coupling of two ``N(0, scale I)`` laws with per-axis correlation ``rho``."""
    if not -1 <= rho <= 1:
        raise ConfigurationError("rho must lie in [-1, 1]")
    sd = math.sqrt(scale)

    def sampler(m, rng):
        a = rng.standard_normal((m, n))
        b = rng.standard_normal((m, n))
        return sd * a, sd * (rho * a + math.sqrt(1 - rho * rho) * b)

    from .geometry import euclidean
    return Coupling(None, None, euclidean(n), sampler=sampler, label=f"gaussian(rho={rho})")


def build_gaussian_candidate(n: int, pi: Coupling, n_paths: int, grid: TimeGrid,
                             seed=None) -> PathEnsemble:
    """Glued Brownian bridges through ``z ~ N(0, I/4)`` on ``R^n``."""
    _check_candidate_grid(grid)
    from .geometry import euclidean
    g = euclidean(n)
    out = np.empty((n_paths, len(grid), n))
    for sl, rng in _blocks(n_paths, seed):
        m = sl.stop - sl.start
        x, y = pi.sample(m, rng)
        if x.shape[1] != n:
            raise ConfigurationError("coupling dimension does not match n")
        z = 0.5 * rng.standard_normal((m, n))
        out[sl] = _glue(g, x, z, y, grid, rng)
    return PathEnsemble(grid, out, g, seed=seed, meta={"kind": "gaussian_candidate",
                                                      "coupling": pi.label})


def gaussian_marginal_variance(t: float) -> float:
    """Per-coordinate variance of ``(1-2t) Y + 2t Z + sqrt(t (1-2t)) W`` for ``t <= 1/2``."""
    return (1 - 2 * t) ** 2 * 0.25 + (2 * t) ** 2 * 0.25 + t * (1 - 2 * t)


def lazy_coupling(g: FlatGeometry, cells, eps: float = 0.1, blur: float = 1e-3) -> Coupling:
    """Mixture ``(1 - eps) * diagonal blurred by the heat kernel + eps * uniform``.

    Both marginals are exactly uniform because the cell kernel is doubly
    stochastic.
    """
    if not 0 <= eps <= 1:
        raise ConfigurationError("eps must lie in [0, 1]")
    cells = _cells_tuple(cells, g.dim)
    N = int(np.prod(cells))
    K = cell_kernel(g, cells, blur)
    P = (1 - eps) * K / N + eps / N**2
    return Coupling(P / P.sum(), cells, g, label=f"lazy(eps={eps}, blur={blur})")


def twisted_coupling(g: FlatGeometry, cells: int, amplitude: float = 0.6, spread: float = 0.3,
                     tol: float = 1e-14, max_iter: int = 20000) -> Coupling:
    """Circle coupling with uniform marginals concentrated near ``y = x + a sin(2 pi x / L)``.

    A Gaussian affinity around the twisted graph is balanced by Sinkhorn
    scaling. The nonconstant displacement makes the resulting bridge flow
    genuinely inhomogeneous.
    """
    if g.kind is not Kind.CIRCLE:
        raise UnsupportedGeometryError("twisted couplings are defined on the circle")
    N = int(cells)
    L = g.lengths[0]
    x = (np.arange(N) + 0.5) * L / N
    d = x[None, :] - x[:, None] - amplitude * np.sin(2 * np.pi * x[:, None] / L)
    d -= L * np.round(d / L)
    P = np.exp(-d**2 / (2 * spread))
    for _ in range(max_iter):
        P /= P.sum(1, keepdims=True) * N
        col = P.sum(0)
        P /= col[None, :] * N
        if np.abs(P.sum(1) - 1 / N).max() < tol:
            break
    return Coupling(P / P.sum(), (N,), g, label=f"twisted(a={amplitude}, s={spread})")


# ---------------------------------------------------------------------------
# ensemble utilities


def fold_ensemble(e: PathEnsemble, q: QuotientMap) -> PathEnsemble:
    """Pathwise fold of a covering-torus ensemble onto the quotient."""
    if e.geometry != q.covering:
        raise GeometryError("ensemble does not live on the covering torus of q")
    folded = np.asarray(q.fold(e.positions)).reshape(e.positions.shape)
    geometry = q.quotient if q.kind == "box" else q
    return PathEnsemble(e.grid, folded, geometry, e.weights, e.seed, dict(e.meta, folded=True))


def marginal_histogram(e: PathEnsemble, t: float, cells, bounds=None) -> GridMeasure:
    """Weighted cell frequencies of ``X_t`` (exact grid times only)."""
    state = _state_geometry(e.geometry)
    cells = _cells_tuple(cells, state.dim)
    if bounds is None and not state.compact:
        raise ConfigurationError("Euclidean histograms need bounds")
    idx = cell_index(e.at(t), state, cells, bounds)
    masses = np.bincount(idx, weights=e.weights, minlength=int(np.prod(cells)))
    return GridMeasure(masses / masses.sum(), cells, state, bounds)


def endpoint_histogram(e: PathEnsemble, cells) -> np.ndarray:
    """Weighted ``(cell_0, cell_1)`` frequency matrix."""
    state = _state_geometry(e.geometry)
    cells = _cells_tuple(cells, state.dim)
    n = int(np.prod(cells))
    i = cell_index(e.positions[:, 0], state, cells)
    j = cell_index(e.positions[:, -1], state, cells)
    return np.bincount(i * n + j, weights=e.weights, minlength=n * n).reshape(n, n)


def tube_occupation(e: PathEnsemble, eps: float) -> np.ndarray:
    """Per-path fraction of grid times spent within ``eps`` of the boundary."""
    state = _state_geometry(e.geometry)
    if not state.has_boundary:
        raise UnsupportedGeometryError("geometry has no boundary")
    x = e.positions
    L = state.length_array
    d = np.minimum(x, L - x).min(-1)
    if isinstance(e.geometry, QuotientMap) and e.geometry.kind == "triangle":
        d = np.minimum(d, np.abs(x[..., 0] - x[..., 1]) / math.sqrt(2))
    return (d < eps).mean(axis=1)
