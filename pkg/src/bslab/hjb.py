"""
Hopf-Cole solver for the potential equation and residual checks.

With ``u = exp(psi)`` the second-order Hamilton-Jacobi equation

    d_t psi + (1/2) Lap psi + (1/2) |grad psi|^2 + 1_T p = 0

becomes the linear backward equation ``d_t u + (1/2) Lap u + 1_T p u = 0``
with ``u_1 = exp(eta)``, multiplicative jumps ``u_{s-} = exp(theta_s) u_s``
at shock times and Neumann conditions on boundaries. It is marched
backwards with Strang splitting: half a step of the pointwise potential
factor, the exact exponential of the discrete heat operator, then the other
half. Every factor is a positive matrix, so ``u`` stays positive.

Grids are node centred. Periodic axes use nodes ``i h`` for
``i = 0..N-1``; bounded axes use ``i h`` for ``i = 0..N`` with mirror ghost
nodes, which makes discrete normal derivatives vanish identically.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import expm

from .geometry import FlatGeometry, Kind, UnsupportedGeometryError
from .measures import VelocityField
from .sampling import TimeGrid, sample_reflected_bm

logger = logging.getLogger(__name__)

Func = Callable[..., np.ndarray]


class ConfigurationError(ValueError):
    """Forcing or scheme parameters are inconsistent."""


class NumericalFailureError(RuntimeError):
    """The scheme produced a nonpositive ``u``."""


# ---------------------------------------------------------------------------
# forcing


@dataclass(frozen=True)
class ForcingSpec:
    """Pressure, shocks and terminal potential.

    Parameters
    ----------
    pressure : callable ``(t, x) -> array``, optional
        ``x`` has shape ``(..., dim)``; the result has shape ``(...)``.
    pressure_grad : callable ``(t, x) -> array``, optional
        Analytic gradient, shape ``(..., dim)``; finite differences otherwise.
    regular_times : list of (float, float)
        Intervals on which the pressure acts (``1_T``).
    shocks : dict
        ``{s: (theta, grad_theta)}`` with callables of ``x``; ``grad_theta``
        may be ``None``.
    eta : callable ``x -> array``, optional
        Terminal potential (for a fixed starting point).
    label : str
    """

    pressure: Func | None = None
    pressure_grad: Func | None = None
    regular_times: tuple = ((0.0, 1.0),)
    shocks: dict = field(default_factory=dict)
    eta: Func | None = None
    label: str = "custom"

    def __post_init__(self):
        for s in self.shocks:
            if not 0 < s < 1:
                raise ConfigurationError("shock times must lie in (0, 1)")
            for a, b in self.regular_times:
                if a < s < b:
                    raise ConfigurationError(f"shock time {s} lies inside a regular interval")
        for a, b in self.regular_times:
            if not 0 <= a < b <= 1:
                raise ConfigurationError("regular intervals must be nonempty subsets of [0, 1]")

    def active(self, t: float) -> bool:
        return any(a <= t <= b for a, b in self.regular_times)

    def p(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.pressure is None or not self.active(t):
            return np.zeros(x.shape[:-1])
        return np.asarray(self.pressure(t, x), float) * np.ones(x.shape[:-1])

    def grad_p(self, t: float, x: np.ndarray) -> np.ndarray | None:
        if self.pressure is None or not self.active(t):
            return np.zeros(x.shape)
        if self.pressure_grad is None:
            return None
        return np.asarray(self.pressure_grad(t, x), float) * np.ones(x.shape)

    def eta_values(self, x: np.ndarray) -> np.ndarray:
        if self.eta is None:
            return np.zeros(x.shape[:-1])
        return np.asarray(self.eta(x), float) * np.ones(x.shape[:-1])

    def reversed(self) -> "ForcingSpec":
        """Forcing of the time-reversed problem (``t -> 1 - t``)."""
        p = None if self.pressure is None else (lambda t, x, f=self.pressure: f(1 - t, x))
        gp = None if self.pressure_grad is None else \
            (lambda t, x, f=self.pressure_grad: f(1 - t, x))
        return ForcingSpec(p, gp, tuple((1 - b, 1 - a) for a, b in self.regular_times),
                           {round(1 - s, 15): v for s, v in self.shocks.items()},
                           self.eta, self.label + "[reversed]")


def zero_forcing() -> ForcingSpec:
    return ForcingSpec(label="zero")


def fourier_forcing(g: FlatGeometry, amplitude: float = 1.0, mode=1, eta_amplitude: float = 0.0,
                    regular_times=((0.0, 1.0),), shocks=None) -> ForcingSpec:
    """Pressure ``A cos(k . x) (1 + t/2)``; cosine in ``pi k x / L`` on bounded axes.

    ``shocks`` maps times to amplitudes ``B`` of ``theta = B cos(k . x)``.
    """
    L = g.length_array
    k = np.broadcast_to(np.asarray(mode, float), (g.dim,))
    w = (2 * np.pi if g.periodic else np.pi) * k / L

    def f(x):
        return np.cos(x @ w)

    def grad(x):
        return -np.sin(x @ w)[..., None] * w

    def pressure(t, x):
        return amplitude * (1 + 0.5 * t) * f(x)

    def pressure_grad(t, x):
        return amplitude * (1 + 0.5 * t) * grad(x)

    if not g.periodic and g.dim > 1 and np.count_nonzero(k) > 1:
        raise ConfigurationError("bounded Fourier presets take a mode along a single axis")
    shock_map = {}
    for s, b in (shocks or {}).items():
        shock_map[float(s)] = (lambda x, b=b: b * f(x), lambda x, b=b: b * grad(x))
    if eta_amplitude == 0:
        eta = None
    elif g.periodic:
        eta = (lambda x: eta_amplitude * np.sin(x @ w + 0.3))
    else:
        # cosines keep the terminal data compatible with the Neumann condition
        eta = (lambda x: eta_amplitude * np.cos(x @ w))
    return ForcingSpec(pressure, pressure_grad, tuple(regular_times), shock_map, eta,
                       f"fourier(A={amplitude}, k={list(k)})")


def bump_forcing(g: FlatGeometry, amplitude: float = 1.0, center=None, width: float = 0.1,
                 regular_times=((0.0, 1.0),)) -> ForcingSpec:
    """Time-constant Gaussian bump pressure (periodised on tori)."""
    L = g.length_array
    c = L / 2 if center is None else np.asarray(center, float)

    def disp(x):
        d = x - c
        return d - L * np.round(d / L) if g.periodic else d

    def pressure(t, x):
        d = disp(x)
        return amplitude * np.exp(-np.sum(d * d, -1) / (2 * width**2))

    def pressure_grad(t, x):
        d = disp(x)
        return -pressure(t, x)[..., None] * d / width**2

    return ForcingSpec(pressure, pressure_grad, tuple(regular_times), {}, None,
                       f"bump(A={amplitude}, w={width})")


def regular_set_indicator(f: ForcingSpec, times) -> np.ndarray:
    return np.array([f.active(t) for t in np.asarray(times, float)])


# ---------------------------------------------------------------------------
# grids and operators


@dataclass(frozen=True)
class SpaceGrid:
    geometry: FlatGeometry
    n: tuple

    @property
    def periodic(self) -> bool:
        return self.geometry.periodic

    @property
    def h(self) -> np.ndarray:
        return self.geometry.length_array / np.asarray(self.n)

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        out = []
        for n, L in zip(self.n, self.geometry.lengths):
            k = np.arange(n) if self.periodic else np.arange(n + 1)
            out.append(k * (L / n))
        return tuple(out)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, -1)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        if self.periodic:
            return mask
        for i in range(len(self.shape)):
            idx = [slice(None)] * len(self.shape)
            idx[i] = 0
            mask[tuple(idx)] = True
            idx[i] = -1
            mask[tuple(idx)] = True
        return mask


def make_grid(g: FlatGeometry, n) -> SpaceGrid:
    if g.kind is Kind.GAUSSIAN:
        raise UnsupportedGeometryError("the potential solver needs a compact geometry")
    if g.dim > 2:
        raise UnsupportedGeometryError("grids beyond two dimensions are not supported")
    n = (int(n),) * g.dim if np.isscalar(n) else tuple(int(v) for v in n)
    if min(n) < 4:
        raise ConfigurationError("need at least 4 intervals per axis")
    return SpaceGrid(g, n)


def laplacian_1d(m: int, h: float, periodic: bool) -> np.ndarray:
    """Three-point Laplacian; mirror ghosts on bounded axes."""
    A = np.zeros((m, m))
    i = np.arange(m)
    A[i, i] = -2.0
    if periodic:
        A[i, (i + 1) % m] += 1.0
        A[i, (i - 1) % m] += 1.0
    else:
        A[i[:-1], i[:-1] + 1] = 1.0
        A[i[1:], i[1:] - 1] = 1.0
        A[0, 1] = 2.0
        A[-1, -2] = 2.0
    return A / h**2


def _along(M: np.ndarray, u: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(M, u, axes=([1], [axis])), 0, axis)


def _lap(u: np.ndarray, grid: SpaceGrid) -> np.ndarray:
    """Discrete Laplacian along spatial axes; leading axes are batch axes."""
    out = np.zeros_like(u)
    nd = len(grid.shape)
    for i, h in enumerate(grid.h):
        ax = u.ndim - nd + i
        if grid.periodic:
            out += (np.roll(u, -1, ax) - 2 * u + np.roll(u, 1, ax)) / h**2
        else:
            up = np.roll(u, -1, ax)
            dn = np.roll(u, 1, ax)
            sl0 = [slice(None)] * u.ndim
            sl0[ax] = 0
            slN = [slice(None)] * u.ndim
            slN[ax] = -1
            sl1 = [slice(None)] * u.ndim
            sl1[ax] = 1
            slm = [slice(None)] * u.ndim
            slm[ax] = -2
            dn[tuple(sl0)] = u[tuple(sl1)]
            up[tuple(slN)] = u[tuple(slm)]
            out += (up - 2 * u + dn) / h**2
    return out


def _grad(u: np.ndarray, grid: SpaceGrid) -> np.ndarray:
    """Central differences; zero normal component on bounded axes."""
    nd = len(grid.shape)
    comps = []
    for i, h in enumerate(grid.h):
        ax = u.ndim - nd + i
        d = (np.roll(u, -1, ax) - np.roll(u, 1, ax)) / (2 * h)
        if not grid.periodic:
            sl = [slice(None)] * u.ndim
            sl[ax] = 0
            d[tuple(sl)] = 0.0
            sl[ax] = -1
            d[tuple(sl)] = 0.0
        comps.append(d)
    return np.stack(comps, -1)


# ---------------------------------------------------------------------------
# solution


@dataclass
class PotentialGrid:
    """``psi`` on a space-time grid.

    ``values[n]`` is ``psi_{t_n}``; at a shock time ``left[n]`` additionally
    stores the left limit ``psi_{t_n -}``.
    """

    grid: SpaceGrid
    times: np.ndarray
    values: np.ndarray
    left: dict = field(default_factory=dict)
    forcing: ForcingSpec | None = None

    @property
    def geometry(self) -> FlatGeometry:
        return self.grid.geometry

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def left_value(self, n: int) -> np.ndarray:
        return self.left.get(n, self.values[n])

    def time_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12:
            raise ConfigurationError(f"t={t} is not a grid time")
        return k

    def interpolate(self, n: int, x: np.ndarray, left: bool = False) -> np.ndarray:
        """Cubic interpolation of ``psi_{t_n}`` (1D grids only)."""
        if len(self.grid.shape) != 1:
            raise UnsupportedGeometryError("interpolation is implemented in 1D")
        vals = self.left_value(n) if left else self.values[n]
        xs = self.grid.axes[0]
        L = self.geometry.lengths[0]
        if self.grid.periodic:
            spl = CubicSpline(np.append(xs, L), np.append(vals, vals[0]), bc_type="periodic")
            return spl(np.mod(x, L))
        spl = CubicSpline(xs, vals, bc_type="clamped")
        return spl(x)


def solve_hopf_cole(g: FlatGeometry, f: ForcingSpec, n_space=64, n_time=64) -> PotentialGrid:
    """Backward march of ``u = exp(psi)`` from ``u_1 = exp(eta)``.

    Shock times must be grid times. The diffusion factor is the exact
    matrix exponential of the discrete Laplacian, so no step restriction
    applies.
    """
    grid = make_grid(g, n_space)
    if int(n_time) < 1:
        raise ConfigurationError("need at least one time step")
    times = np.linspace(0.0, 1.0, int(n_time) + 1)
    dt = 1.0 / n_time
    shock_index = {}
    for s in f.shocks:
        k = int(round(s * n_time))
        if abs(times[k] - s) > 1e-12:
            raise ConfigurationError(f"shock time {s} is not on the time grid")
        shock_index[k] = s
    heat = [expm(0.5 * dt * laplacian_1d(m, h, grid.periodic))
            for m, h in zip(grid.shape, grid.h)]
    x = grid.points()
    u = np.exp(f.eta_values(x))
    psi = np.empty((times.size,) + grid.shape)
    left = {}
    psi[-1] = np.log(u)
    for n in range(times.size - 1, 0, -1):
        if n in shock_index:
            theta = f.shocks[shock_index[n]][0]
            u = u * np.exp(np.asarray(theta(x), float))
            left[n] = np.log(u)
        tm = times[n] - 0.5 * dt
        half = np.exp(0.5 * dt * f.p(tm, x))
        u = u * half
        for ax, H in enumerate(heat):
            u = _along(H, u, ax)
        u = u * half
        if not np.all(u > 0) or not np.all(np.isfinite(u)):
            raise NumericalFailureError(f"u lost positivity at t={times[n - 1]:.6f}")
        psi[n - 1] = np.log(u)
    return PotentialGrid(grid, times, psi, left, f)


def gradient_field(pg: PotentialGrid, sign: str = "forward", left: bool = False) -> VelocityField:
    """Central-difference gradient of ``psi``.

    ``forward`` returns ``V_t = grad psi_t``. ``backward`` expects ``pg`` to
    be the potential of the time-reversed problem and returns
    ``U_t = -grad phi_{1-t}``. With ``left`` the left limits are used at
    shock times.
    """
    vals = np.stack([pg.left_value(n) if left else pg.values[n] for n in range(pg.times.size)])
    V = _grad(vals, pg.grid)
    times = pg.times
    if sign == "backward":
        V = -V[::-1]
        times = 1.0 - pg.times[::-1]
    elif sign != "forward":
        raise ValueError("sign must be 'forward' or 'backward'")
    return VelocityField(times, pg.grid.axes, V, pg.geometry, meta={"kind": sign, "nodes": True})


def hjb_residual(pg: PotentialGrid, f: ForcingSpec | None = None, form: str = "proof") -> np.ndarray:
    """Max-norm residual on every time interval, evaluated at its midpoint.

    ``form="proof"`` checks ``d_t psi + Lap psi / 2 + |grad psi|^2 / 2 + p``;
    ``form="display"`` checks ``d_t psi - Lap psi / 2 + |grad psi|^2 + p``,
    the variant that does not linearise under ``u = exp(psi)``. Boundary
    nodes are excluded. The right end of an interval ending at a shock uses
    the left limit.
    """
    f = pg.forcing if f is None else f
    x = pg.grid.points()
    interior = ~pg.grid.boundary_mask()
    out = np.empty(pg.times.size - 1)
    for n in range(pg.times.size - 1):
        a, b = pg.values[n], pg.left_value(n + 1)
        dt = pg.times[n + 1] - pg.times[n]
        mid = 0.5 * (a + b)
        lap = _lap(mid, pg.grid)
        grad = _grad(mid, pg.grid)
        sq = np.sum(grad**2, -1)
        p = f.p(pg.times[n] + 0.5 * dt, x) if f is not None else 0.0
        if form == "proof":
            r = (b - a) / dt + 0.5 * lap + 0.5 * sq + p
        elif form == "display":
            r = (b - a) / dt - 0.5 * lap + sq + p
        else:
            raise ValueError("form must be 'proof' or 'display'")
        out[n] = float(np.max(np.abs(r[interior])))
    return out


def ns_residual(v: VelocityField, f: ForcingSpec, viscosity_sign: int, grid: SpaceGrid,
                skip_times=()) -> np.ndarray:
    """Residual of ``(d_t + v . grad) v = (sign/2) Lap v - grad p`` per interval.

    ``viscosity_sign=-1`` is the forward variant for ``V = grad psi``;
    ``+1`` is the backward one for ``U``. Intervals touching a time in
    ``skip_times`` (shock times) are reported as NaN. Boundary nodes are
    excluded.
    """
    if viscosity_sign not in (-1, 1):
        raise ValueError("viscosity_sign must be +1 or -1")
    x = grid.points()
    interior = ~grid.boundary_mask()
    times = v.times
    out = np.full(times.size - 1, np.nan)
    for n in range(times.size - 1):
        if any(abs(times[n] - s) < 1e-12 or abs(times[n + 1] - s) < 1e-12 for s in skip_times):
            continue
        a, b = v.values[n], v.values[n + 1]
        dt = times[n + 1] - times[n]
        tm = times[n] + 0.5 * dt
        mid = 0.5 * (a + b)
        adv = np.zeros_like(mid)
        for i in range(mid.shape[-1]):
            gi = _grad(mid[..., i], grid)
            adv[..., i] = np.sum(mid * gi, -1)
        lap = np.stack([_lap(mid[..., i], grid) for i in range(mid.shape[-1])], -1)
        gp = f.grad_p(tm, x)
        if gp is None:
            gp = _grad(f.p(tm, x), grid)
        r = (b - a) / dt + adv - 0.5 * viscosity_sign * lap + gp
        out[n] = float(np.max(np.abs(r[interior])))
    return out


def shock_jumps(pg: PotentialGrid, f: ForcingSpec | None = None) -> dict:
    """Measured jumps of ``psi`` and ``grad psi`` against ``-theta`` and ``-grad theta``."""
    f = pg.forcing if f is None else f
    x = pg.grid.points()
    out = {}
    for n in sorted(pg.left):
        s = float(pg.times[n])
        theta, grad_theta = f.shocks[min(f.shocks, key=lambda k: abs(k - s))]
        jump = pg.values[n] - pg.left[n]
        th = np.asarray(theta(x), float)
        dV = _grad(pg.values[n] - pg.left[n], pg.grid)
        gt = np.asarray(grad_theta(x), float) if grad_theta is not None else _grad(th, pg.grid)
        interior = ~pg.grid.boundary_mask()
        out[s] = {"psi_jump_error": float(np.max(np.abs(jump + th))),
                  "grad_jump_error": float(np.max(np.abs(dV + gt)[interior]))}
    return out


def impermeability(v: VelocityField, grid: SpaceGrid) -> float:
    """Largest normal component at boundary nodes (exactly zero by construction)."""
    if grid.periodic:
        return 0.0
    worst = 0.0
    nd = len(grid.shape)
    for i in range(nd):
        idx = [slice(None)] * (nd + 1)
        for end in (0, -1):
            idx[1 + i] = end
            worst = max(worst, float(np.max(np.abs(v.values[tuple(idx)][..., i]))))
        idx[1 + i] = slice(None)
    return worst


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class FeynmanKacEstimate:
    mean: float
    half_width: float
    n_samples: int

    @property
    def log_mean(self) -> float:
        return math.log(self.mean)


def feynman_kac_estimate(g: FlatGeometry, f: ForcingSpec, t: float, z, n_samples: int = 10000,
                         seed=None, n_steps: int = 200, z_score: float = 1.96) -> FeynmanKacEstimate:
    """Monte Carlo of ``E[exp(eta(X_1) + sum theta_s(X_s) + int_t^1 1_T p)|X_t = z]``.

    The reflected motion is sampled exactly on a grid of ``n_steps``
    intervals over ``[t, 1]`` that contains every later shock time; the
    pressure integral uses the trapezoid rule. The half-width is the
    normal-approximation interval ``z_score * sd / sqrt(n)``.
    """
    if n_samples < 100:
        raise ConfigurationError("need at least 100 samples")
    if not 0 <= t < 1:
        raise ConfigurationError("t must lie in [0, 1)")
    base = np.linspace(t, 1.0, n_steps + 1)
    later = [s for s in f.shocks if s > t]
    times = np.unique(np.concatenate([base, later]))
    grid = TimeGrid(times)
    e = sample_reflected_bm(g, z, grid, seed=seed, n_paths=n_samples)
    X = e.positions
    logw = f.eta_values(X[:, -1])
    for s in later:
        k = grid.index(s)
        logw = logw + np.asarray(f.shocks[s][0](X[:, k]), float)
    if f.pressure is not None:
        mids = 0.5 * (times[:-1] + times[1:])
        act = np.array([f.active(m) for m in mids], dtype=float)
        pv = np.stack([np.asarray(f.pressure(tt, X[:, k]), float) * np.ones(len(X))
                       for k, tt in enumerate(times)], axis=1)
        logw = logw + (0.5 * (pv[:, :-1] + pv[:, 1:]) * act * np.diff(times)).sum(1)
    vals = np.exp(logw)
    mean = float(vals.mean())
    hw = z_score * float(vals.std(ddof=1)) / math.sqrt(n_samples)
    return FeynmanKacEstimate(mean, hw, n_samples)


# ---------------------------------------------------------------------------
# density comparison


def density_comparison_check(paths: np.ndarray, times: np.ndarray, pg: PotentialGrid,
                             f: ForcingSpec | None = None) -> dict:
    """Compare two expressions of ``log dP^x/dR^x`` on ``[0, 1]`` along paths.

    Potential form: ``sum theta + int p + psi_1(X_1) - psi_0(X_0)``.
    Girsanov form: ``int <zeta, dX> - (1/2) int |zeta|^2 dt`` with
    ``zeta = grad psi``, the Ito integral written as the trapezoid sum minus
    the correction ``(1/2) int Lap psi dt``. Only 1D periodic grids are
    supported. ``paths`` has shape ``(n, len(times))``.
    """
    f = pg.forcing if f is None else f
    g = pg.geometry
    if not (g.periodic and g.dim == 1):
        raise UnsupportedGeometryError("density comparison is implemented on the circle")
    L = g.lengths[0]
    paths = np.asarray(paths, float)
    times = np.asarray(times, float)
    k_of = [pg.time_index(t) for t in times]
    xs = pg.grid.axes[0]
    splines = []
    for n in k_of:
        vals = pg.values[n]
        splines.append(CubicSpline(np.append(xs, L), np.append(vals, vals[0]), bc_type="periodic"))

    def ev(j, x, d=0):
        return splines[j](np.mod(x, L), d)

    psi0 = ev(0, paths[:, 0])
    psi1 = ev(len(times) - 1, paths[:, -1])
    pint = np.zeros(len(paths))
    if f.pressure is not None:
        pv = np.stack([f.p(t, paths[:, j, None]) for j, t in enumerate(times)], 1)
        pint = (0.5 * (pv[:, :-1] + pv[:, 1:]) * np.diff(times)).sum(1)
    potential = pint + psi1 - psi0
    gir = np.zeros(len(paths))
    for j in range(len(times) - 1):
        dt = times[j + 1] - times[j]
        dx = paths[:, j + 1] - paths[:, j]
        dx = dx - L * np.round(dx / L)
        za, zb = ev(j, paths[:, j], 1), ev(j + 1, paths[:, j + 1], 1)
        la, lb = ev(j, paths[:, j], 2), ev(j + 1, paths[:, j + 1], 2)
        gir += 0.5 * (za + zb) * dx - 0.25 * (la + lb) * dt - 0.25 * (za**2 + zb**2) * dt
    disc = potential - gir
    scale = float(np.mean(np.abs(potential)))
    return {"mean_abs": float(np.mean(np.abs(disc))), "mean": float(np.mean(disc)),
            "scale": scale, "relative": float(np.mean(np.abs(disc)) / max(scale, 1e-300))}
