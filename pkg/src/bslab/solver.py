"""
Discrete Brenier-Schrodinger solver.

A path measure on ``N`` cells and ``T + 1`` times is stored in product form

    Q(z_0, ..., z_T) = r0(z_0) w(z_0, z_T) prod_t a_t(z_t) prod_t K_t(z_t, z_{t+1}) / Z

so the reference chain ``R`` is recovered with ``w = 1`` and ``a = 1``.
Constraints are enforced by cyclic I-projections, each of which rescales
one factor.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import FlatGeometry, _cells_tuple, cell_centers, cell_kernel
from .measures import Coupling, GridMeasure
from .sampling import PathEnsemble, TimeGrid, _blocks

logger = logging.getLogger(__name__)


class InfeasibleError(ValueError):
    """A target charges a cell or cell pair the current measure cannot reach."""


def discretize_reference(g: FlatGeometry, cells, grid: TimeGrid) -> list[np.ndarray]:
    """Cell-averaged heat-kernel transition matrices for every grid step."""
    cells = _cells_tuple(cells, g.dim)
    if int(np.prod(cells)) < 2:
        raise ValueError("need at least two cells")
    cache: dict[float, np.ndarray] = {}
    out = []
    for dt in np.diff(grid.times):
        key = round(float(dt), 14)
        if key not in cache:
            cache[key] = cell_kernel(g, cells, float(dt))
        out.append(cache[key])
    return out


def _log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(x)


@dataclass
class DiscretePathMeasure:
    """Factorised Markov path measure ``dQ/dR = w(z_0, z_T) prod_t a_t(z_t)``.

    Attributes
    ----------
    log_w : ndarray, shape (N, N)
        Log endpoint weight.
    log_a : ndarray, shape (T + 1, N)
        Log per-time potentials.
    kernels : list of ndarray
        Reference transition matrices ``K_t``, one per step.
    r0 : ndarray, shape (N,)
        Reference initial law.
    """

    log_w: np.ndarray
    log_a: np.ndarray
    kernels: list
    r0: np.ndarray
    grid: TimeGrid | None = None
    geometry: FlatGeometry | None = None
    cells: tuple | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.log_w = np.asarray(self.log_w, float)
        self.log_a = np.asarray(self.log_a, float)
        self.r0 = np.asarray(self.r0, float)
        N = self.r0.size
        if self.log_w.shape != (N, N) or self.log_a.shape != (len(self.kernels) + 1, N):
            raise ValueError("inconsistent shapes in the path measure")

    @classmethod
    def reference(cls, kernels, r0, grid=None, geometry=None, cells=None):
        N = len(r0)
        return cls(np.zeros((N, N)), np.zeros((len(kernels) + 1, N)), list(kernels),
                   np.asarray(r0, float), grid, geometry, cells)

    def copy(self) -> "DiscretePathMeasure":
        return DiscretePathMeasure(self.log_w.copy(), self.log_a.copy(), self.kernels,
                                   self.r0, self.grid, self.geometry, self.cells)

    @property
    def N(self) -> int:
        return self.r0.size

    @property
    def T(self) -> int:
        return len(self.kernels)

    def invalidate(self):
        self._cache.clear()

    # -- messages ---------------------------------------------------------

    def _w(self):
        return np.exp(self.log_w - self.log_w.max()), self.log_w.max()

    def _a(self, t):
        m = self.log_a[t].max()
        return np.exp(self.log_a[t] - m), m

    def forward(self):
        """Scaled forward matrices ``F_s[z0, z]`` and their log scales."""
        if "F" not in self._cache:
            F, logs = [], []
            a0, m0 = self._a(0)
            cur, lc = np.diag(a0), m0
            F.append(cur)
            logs.append(lc)
            for t, K in enumerate(self.kernels):
                a, m = self._a(t + 1)
                cur = (cur @ K) * a
                s = cur.max()
                if not s > 0:
                    raise InfeasibleError("path measure has zero mass")
                cur = cur / s
                lc = lc + m + math.log(s)
                F.append(cur)
                logs.append(lc)
            self._cache["F"] = (F, np.array(logs))
        return self._cache["F"]

    def backward(self):
        """Scaled backward matrices ``B_s[z, zT]`` (excluding ``a_s``)."""
        if "B" not in self._cache:
            B = [None] * (self.T + 1)
            logs = np.zeros(self.T + 1)
            cur, lc = np.eye(self.N), 0.0
            B[self.T] = cur
            for t in range(self.T - 1, -1, -1):
                a, m = self._a(t + 1)
                cur = self.kernels[t] @ (a[:, None] * cur)
                s = cur.max()
                if not s > 0:
                    raise InfeasibleError("path measure has zero mass")
                cur = cur / s
                lc = lc + m + math.log(s)
                B[t] = cur
                logs[t] = lc
            self._cache["B"] = (B, logs)
        return self._cache["B"]

    def log_partition(self) -> float:
        if "logZ" not in self._cache:
            F, lf = self.forward()
            w, lw = self._w()
            z = float(np.sum(self.r0[:, None] * F[-1] * w))
            if not z > 0:
                raise InfeasibleError("path measure has zero mass")
            self._cache["logZ"] = math.log(z) + lf[-1] + lw
        return self._cache["logZ"]

    def endpoint_law(self) -> np.ndarray:
        """``Q(X_0 = i, X_T = j)``."""
        F, lf = self.forward()
        w, lw = self._w()
        E = self.r0[:, None] * F[-1] * w
        return E / E.sum()

    def start_joint(self, s: int) -> np.ndarray:
        """``Q(X_0 = i, X_s = j)``."""
        F, _ = self.forward()
        B, _ = self.backward()
        w, _ = self._w()
        J = self.r0[:, None] * F[s] * (B[s] @ w.T).T
        return J / J.sum()

    def marginal(self, s: int) -> np.ndarray:
        return self.start_joint(s).sum(0)

    def marginals(self) -> np.ndarray:
        return np.stack([self.marginal(s) for s in range(self.T + 1)])

    def transition_joint(self, s: int) -> np.ndarray:
        """``Q(X_s = i, X_{s+1} = j)``."""
        F, _ = self.forward()
        B, _ = self.backward()
        w, _ = self._w()
        # G[z0, j] = sum_zT B_{s+1}[j, zT] w[z0, zT]
        G = (B[s + 1] @ w.T).T
        a, _ = self._a(s + 1)
        K = self.kernels[s]
        P = np.einsum("i,ia,aj,j,ij->aj", self.r0, F[s], K, a, G, optimize=True)
        return P / P.sum()

    def density_log(self, paths: np.ndarray) -> np.ndarray:
        """``log dQ/dR`` along cell-index paths of shape ``(n, T + 1)``."""
        paths = np.asarray(paths)
        out = self.log_w[paths[:, 0], paths[:, -1]].copy()
        for t in range(self.T + 1):
            out += self.log_a[t, paths[:, t]]
        return out - self.log_partition()

    # -- potentials -----------------------------------------------------

    def potentials(self) -> dict:
        """Regular-form potentials ``eta = log w`` and ``theta_t = log a_t``.

        The additive constant is absorbed into ``eta`` so that
        ``dQ/dR = exp(eta + sum_t theta_t)`` holds without a normaliser.
        """
        return {"eta": self.log_w - self.log_partition(), "theta": self.log_a.copy()}

    @classmethod
    def from_potentials(cls, eta, theta, kernels, r0, **kw) -> "DiscretePathMeasure":
        return cls(np.asarray(eta, float), np.asarray(theta, float), list(kernels), r0, **kw)


# ---------------------------------------------------------------------------
# projections


def _ratio(target: np.ndarray, current: np.ndarray, what: str) -> np.ndarray:
    bad = (target > 0) & (current <= 0)
    if np.any(bad):
        raise InfeasibleError(f"{what}: target charges {int(bad.sum())} unreachable cells")
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(target > 0, target / np.where(current > 0, current, 1), 0.0)
    return r


def project_marginal(m: DiscretePathMeasure, t: int, mu) -> DiscretePathMeasure:
    """I-projection onto ``{Q : Q_t = mu}``; returns a new measure."""
    mu = np.asarray(getattr(mu, "masses", mu), float)
    out = m.copy()
    r = _ratio(mu, m.marginal(t), f"marginal at step {t}")
    out.log_a[t] = m.log_a[t] + _log(r)
    return out


def project_endpoints(m: DiscretePathMeasure, pi) -> DiscretePathMeasure:
    """I-projection onto ``{Q : Q_{0T} = pi}``; returns a new measure."""
    P = np.asarray(getattr(pi, "matrix", pi), float)
    out = m.copy()
    r = _ratio(P, m.endpoint_law(), "endpoint coupling")
    out.log_w = m.log_w + _log(r)
    return out


# ---------------------------------------------------------------------------
# problem and solve


@dataclass
class DiscreteBSProblem:
    """Discretised entropy minimisation problem.

    Parameters
    ----------
    geometry : FlatGeometry
    cells : tuple of int
    grid : TimeGrid
    targets : dict
        Maps grid indices to target marginals (arrays or GridMeasure).
    coupling : ndarray or Coupling, optional
        Endpoint constraint; ``None`` leaves the endpoints free.
    kernels : list of ndarray, optional
        Reference transitions; built from the heat kernel when omitted.
    r0 : ndarray, optional
        Reference initial law; uniform when omitted.
    """

    geometry: FlatGeometry
    cells: tuple
    grid: TimeGrid
    targets: dict
    coupling: object = None
    kernels: list | None = None
    r0: np.ndarray | None = None

    def __post_init__(self):
        self.cells = _cells_tuple(self.cells, self.geometry.dim)
        N = int(np.prod(self.cells))
        if self.kernels is None:
            self.kernels = discretize_reference(self.geometry, self.cells, self.grid)
        if len(self.kernels) != len(self.grid) - 1:
            raise ValueError("need one kernel per time step")
        for K in self.kernels:
            if K.shape != (N, N) or np.max(np.abs(K.sum(1) - 1)) > 1e-12:
                raise ValueError("kernels must be row-stochastic N x N matrices")
        if self.r0 is None:
            self.r0 = np.full(N, 1.0 / N)
        targets = {}
        for t, mu in self.targets.items():
            arr = np.asarray(getattr(mu, "masses", mu), float)
            if arr.shape != (N,) or abs(arr.sum() - 1) > 1e-9 or np.any(arr < 0):
                raise ValueError(f"target at step {t} is not a probability vector on the grid")
            if not 0 <= int(t) <= len(self.kernels):
                raise ValueError(f"constraint index {t} outside the grid")
            targets[int(t)] = arr
        self.targets = dict(sorted(targets.items()))
        if self.coupling is not None:
            P = np.asarray(getattr(self.coupling, "matrix", self.coupling), float)
            if P.shape != (N, N) or abs(P.sum() - 1) > 1e-9 or np.any(P < 0):
                raise ValueError("endpoint coupling is not a probability matrix on the grid")
            self.coupling = P

    @property
    def N(self) -> int:
        return int(np.prod(self.cells))

    def reference_measure(self) -> DiscretePathMeasure:
        return DiscretePathMeasure.reference(self.kernels, self.r0, self.grid,
                                             self.geometry, self.cells)

    def residual(self, m: DiscretePathMeasure) -> float:
        """Largest total-variation violation over all constraints."""
        res = 0.0
        if self.coupling is not None:
            res = 0.5 * float(np.abs(m.endpoint_law() - self.coupling).sum())
        for t, mu in self.targets.items():
            res = max(res, 0.5 * float(np.abs(m.marginal(t) - mu).sum()))
        return res


def incompressible_problem(g: FlatGeometry, cells, steps: int, coupling=None,
                           constraint_indices=None) -> DiscreteBSProblem:
    """All marginals uniform (every grid time by default) plus an optional coupling."""
    grid = TimeGrid.uniform(steps)
    cells = _cells_tuple(cells, g.dim)
    N = int(np.prod(cells))
    idx = range(steps + 1) if constraint_indices is None else constraint_indices
    return DiscreteBSProblem(g, cells, grid, {t: np.full(N, 1.0 / N) for t in idx}, coupling)


@dataclass
class SolveDiagnostics:
    sweeps: int = 0
    residuals: list = field(default_factory=list)
    entropies: list = field(default_factory=list)
    duals: list = field(default_factory=list)
    converged: bool = False

    @property
    def residual(self) -> float:
        return self.residuals[-1] if self.residuals else math.inf

    def to_dict(self) -> dict:
        return {"sweeps": self.sweeps, "converged": self.converged,
                "residuals": [float(v) for v in self.residuals],
                "entropies": [float(v) for v in self.entropies],
                "duals": [float(v) for v in self.duals]}


def dual_value(problem: DiscreteBSProblem, m: DiscretePathMeasure) -> float:
    """Dual objective ``<pi, eta> + sum_t <mu_t, theta_t> - log Z``.

    Each I-projection is an exact block-coordinate ascent step on this
    concave function, so it never decreases along the iterations.
    """
    val = -m.log_partition()
    if problem.coupling is not None:
        P = problem.coupling
        val += float(np.sum(P[P > 0] * m.log_w[P > 0]))
    for t, mu in problem.targets.items():
        val += float(np.sum(mu[mu > 0] * m.log_a[t][mu > 0]))
    return val


def _sweep(problem: DiscreteBSProblem, m: DiscretePathMeasure) -> DiscretePathMeasure:
    """One pass: endpoints, then marginals in increasing time.

    Backward messages are computed once per pass and the forward ones are
    advanced incrementally, since projecting at ``t`` only changes factors
    at ``t`` and earlier forward messages stay valid.
    """
    if problem.coupling is not None:
        m = project_endpoints(m, problem.coupling)
    if not problem.targets:
        return m
    m = m.copy()
    B, _ = m.backward()
    F = None
    for t in range(m.T + 1):
        a, _ = m._a(t)
        if F is None:
            F = np.diag(a)
        else:
            F = (F @ m.kernels[t - 1]) * a
            F = F / F.max()
        if t in problem.targets:
            w, _ = m._w()
            J = m.r0[:, None] * F * (B[t] @ w.T).T
            total = J.sum()
            if not total > 0:
                raise InfeasibleError("path measure has zero mass")
            q = J.sum(0) / total
            r = _ratio(problem.targets[t], q, f"marginal at step {t}")
            m.log_a[t] = m.log_a[t] + _log(r)
            F = F * r
            s = F.max()
            if not s > 0:
                raise InfeasibleError("path measure has zero mass")
            F = F / s
    m.invalidate()
    return m


def solve_ipfp(problem: DiscreteBSProblem, tol: float = 1e-10, max_sweeps: int = 500,
               track_entropy: bool = True) -> tuple[DiscretePathMeasure, SolveDiagnostics]:
    """Cyclic I-projections until the largest TV violation drops below ``tol``."""
    from .entropy import path_measure_entropy

    m = problem.reference_measure()
    diag = SolveDiagnostics()
    res = problem.residual(m)
    diag.residuals.append(res)
    if track_entropy:
        diag.entropies.append(path_measure_entropy(m).total)
        diag.duals.append(dual_value(problem, m))
    while res >= tol and diag.sweeps < max_sweeps:
        m = _sweep(problem, m)
        diag.sweeps += 1
        res = problem.residual(m)
        diag.residuals.append(res)
        if track_entropy:
            diag.entropies.append(path_measure_entropy(m).total)
            diag.duals.append(dual_value(problem, m))
        if not math.isfinite(res):
            break
    diag.converged = res < tol
    logger.info("ipfp: %d sweeps, residual %.3e", diag.sweeps, res)
    return m, diag


# ---------------------------------------------------------------------------
# sampling


def sample_paths(m: DiscretePathMeasure, n: int, seed=None, as_cells: bool = False):
    """Exact forward sampling of the discrete path measure.

    ``X_0`` and its endpoint partner are drawn jointly from ``(r0, w)`` via
    the start marginal; every later step uses the Doob-transformed
    transition ``K(z, .) a_{t+1}(.) h_{t+1}(., z_0)`` with
    ``h_s(z, z_0) = sum_zT B_s[z, zT] w[z_0, zT]``.

    Returns cell-index paths when ``as_cells`` is set, otherwise a
    PathEnsemble of cell centres (requires geometry and cells).
    """
    if not math.isfinite(m.log_partition()):
        raise InfeasibleError("degenerate measure")
    B, _ = m.backward()
    w, _ = m._w()
    H = [B[s] @ w.T for s in range(m.T + 1)]     # H[s][z, z0]
    q0 = m.start_joint(0).sum(1)
    paths = np.empty((n, m.T + 1), dtype=np.int64)
    for sl, rng in _blocks(n, seed):
        k = sl.stop - sl.start
        z0 = rng.choice(m.N, size=k, p=q0)
        cur = z0
        paths[sl, 0] = z0
        for t in range(m.T):
            a, _ = m._a(t + 1)
            P = m.kernels[t][cur] * a[None, :] * H[t + 1][:, z0].T
            P /= P.sum(1, keepdims=True)
            u = rng.random(k)
            cur = np.minimum((np.cumsum(P, axis=1) < u[:, None]).sum(1), m.N - 1)
            paths[sl, t + 1] = cur
    if as_cells:
        return paths
    if m.geometry is None or m.cells is None or m.grid is None:
        raise ValueError("need geometry, cells and grid to map paths to points")
    centers = cell_centers(m.geometry, m.cells)
    return PathEnsemble(m.grid, centers[paths], m.geometry, seed=seed,
                        meta={"kind": "discrete", "cells": list(m.cells)})


def marginal_measures(m: DiscretePathMeasure) -> list[GridMeasure]:
    return [GridMeasure(q / q.sum(), m.cells, m.geometry) for q in m.marginals()]
