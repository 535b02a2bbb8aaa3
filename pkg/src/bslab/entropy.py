"""
Relative entropies on grids, bridge midpoints and factorised path measures.

An infinite relative entropy is reported through ``EntropyReport.is_finite``;
``total`` is then ``math.inf`` in Python and ``null`` in JSON.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .geometry import (FlatGeometry, GeometryError, Kind, UnsupportedGeometryError,
                       as_points, cell_centers, cell_kernel, heat_kernel)
from .measures import Coupling, GridMeasure


@dataclass(frozen=True)
class EntropyReport:
    total: float
    is_finite: bool
    terms: dict = field(default_factory=dict)

    @classmethod
    def infinite(cls, **terms) -> "EntropyReport":
        return cls(math.inf, False, terms)

    @classmethod
    def from_terms(cls, **terms) -> "EntropyReport":
        total = float(sum(terms.values()))
        return cls(total, math.isfinite(total), {k: float(v) for k, v in terms.items()})

    def to_dict(self) -> dict:
        def enc(v):
            return float(v) if math.isfinite(v) else None
        return {"total": enc(self.total), "is_finite": self.is_finite,
                "terms": {k: enc(v) for k, v in self.terms.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _kl_arrays(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, float).ravel()
    q = np.asarray(q, float).ravel()
    if p.shape != q.shape:
        raise GeometryError("measures live on different grids")
    charged = p > 0
    if np.any(q[charged] <= 0):
        return math.inf
    val = float(np.sum(p[charged] * (np.log(p[charged]) - np.log(q[charged]))))
    return max(val, 0.0)


def kl_divergence(mu, nu) -> EntropyReport:
    """``sum_i mu_i log(mu_i / nu_i)`` with ``0 log 0 = 0``.

    Accepts two GridMeasures on the same grid, or two arrays of equal shape.
    """
    if isinstance(mu, GridMeasure) and isinstance(nu, GridMeasure) and not mu.same_grid(nu):
        raise GeometryError("measures live on different grids")
    p = getattr(mu, "masses", mu)
    q = getattr(nu, "masses", nu)
    val = _kl_arrays(p, q)
    if not math.isfinite(val):
        return EntropyReport.infinite()
    return EntropyReport(val, True, {})


# ---------------------------------------------------------------------------
# bridge midpoints


def _check_compact(g: FlatGeometry):
    if g.kind is Kind.GAUSSIAN:
        raise UnsupportedGeometryError("use gaussian_bridge_entropy on Euclidean space")


def _midpoint_nodes(g: FlatGeometry, resolution: int) -> np.ndarray:
    return cell_centers(g, resolution)


def bridge_entropy_matrix(g: FlatGeometry, xs, ys, resolution: int = 128) -> np.ndarray:
    """``H(vol | R^{xy}_{1/2})`` for all pairs of ``xs`` and ``ys``.

    The midpoint law of the bridge has density ``p_{1/2}(x,z) p_{1/2}(z,y) / p_1(x,y)``
    with respect to ``vol``, so the entropy splits into
    ``-A(x) - A(y) + log p_1(x, y)`` with ``A(x) = int log p_{1/2}(x, z) dvol(z)``,
    evaluated by the midpoint rule on ``resolution`` cells per axis.
    """
    _check_compact(g)
    xs = as_points(xs, g.dim).reshape(-1, g.dim)
    ys = as_points(ys, g.dim).reshape(-1, g.dim)
    z = _midpoint_nodes(g, resolution)
    Ax = np.log(heat_kernel(g, 0.5, xs[:, None], z[None])).mean(1)
    Ay = np.log(heat_kernel(g, 0.5, ys[:, None], z[None])).mean(1)
    log_p1 = np.log(heat_kernel(g, 1.0, xs[:, None], ys[None]))
    out = log_p1 - Ax[:, None] - Ay[None, :]
    return np.maximum(out, 0.0)


def bridge_midpoint_entropy(g: FlatGeometry, x, y, resolution: int = 128) -> float:
    """Relative entropy of ``vol`` with respect to the bridge midpoint law ``R^{xy}_{1/2}``."""
    return float(bridge_entropy_matrix(g, x, y, resolution)[0, 0])


def bridge_entropy_sup(g: FlatGeometry, n_points: int = 32, resolution: int = 128) -> dict:
    """Largest bridge entropy over a grid of endpoint pairs and an analytic cap.

    ``cap = log max p_1 - 2 log min p_{1/2}`` bounds the entropy for every
    pair because the bridge density is at least ``min p_{1/2}^2 / max p_1``.
    """
    _check_compact(g)
    pts = cell_centers(g, n_points)
    H = bridge_entropy_matrix(g, pts, pts, resolution)
    z = _midpoint_nodes(g, resolution)
    p_half = heat_kernel(g, 0.5, pts[:, None], z[None])
    p_one = heat_kernel(g, 1.0, pts[:, None], pts[None])
    cap = float(np.log(p_one.max()) - 2 * np.log(p_half.min()))
    return {"sup": float(H.max()), "cap": cap, "argmax": np.unravel_index(H.argmax(), H.shape)}


# ---------------------------------------------------------------------------
# Gaussian case


def gaussian_bridge_entropy(x, y) -> float:
    """``H(N(0, I/4) | N((x+y)/2, I/4)) = |x + y|^2 / 2``."""
    x = np.atleast_1d(np.asarray(x, float))
    y = np.atleast_1d(np.asarray(y, float))
    if x.shape != y.shape:
        raise GeometryError("points must have the same dimension")
    return 0.5 * float(np.sum((x + y) ** 2))


def gaussian_kl_quadrature(x, y, var: float = 0.25) -> float:
    """Numerical ``H(N(0, var I) | N((x+y)/2, var I))``, one quadrature per axis."""
    x = np.atleast_1d(np.asarray(x, float))
    y = np.atleast_1d(np.asarray(y, float))
    if x.shape != y.shape:
        raise GeometryError("points must have the same dimension")
    sd = math.sqrt(var)
    total = 0.0
    for m in (x + y) / 2:
        def integrand(u, m=m):
            log_p = -u * u / (2 * var)
            log_q = -(u - m) ** 2 / (2 * var)
            return math.exp(log_p) / (sd * math.sqrt(2 * math.pi)) * (log_p - log_q)
        lo, hi = -12 * sd, 12 * sd
        val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)
        total += val
    return total


def gaussian_bridge_diagnostics(x, y) -> dict:
    """Both closed-form candidates next to the quadrature value."""
    x = np.atleast_1d(np.asarray(x, float))
    y = np.atleast_1d(np.asarray(y, float))
    return {"shipped": gaussian_bridge_entropy(x, y),
            "half_sq_sum": 0.5 * float(np.sum((x + y) ** 2)),
            "half_sq_diff": 0.5 * float(np.sum((x - y) ** 2)),
            "quadrature": gaussian_kl_quadrature(x, y)}


def gaussian_kl(mean0, cov0, mean1, cov1) -> float:
    """Closed-form ``H(N(mean0, cov0) | N(mean1, cov1))``."""
    m0, m1 = np.atleast_1d(mean0).astype(float), np.atleast_1d(mean1).astype(float)
    S0, S1 = np.atleast_2d(cov0).astype(float), np.atleast_2d(cov1).astype(float)
    k = m0.size
    S1inv = np.linalg.inv(S1)
    d = m1 - m0
    _, ld0 = np.linalg.slogdet(S0)
    _, ld1 = np.linalg.slogdet(S1)
    return 0.5 * float(np.trace(S1inv @ S0) + d @ S1inv @ d - k + ld1 - ld0)


def gaussian_endpoint_entropy(n: int, rho: float, var: float = 0.25) -> float:
    """``H(pi | R_01)`` for the correlated Gaussian coupling.

    ``pi`` has ``N(0, var)`` marginals with per-axis correlation ``rho``;
    ``R_01`` is Brownian motion started from ``N(0, var)``, so per axis
    ``(X_0, X_1)`` has covariance ``[[var, var], [var, var + 1]]``.
    """
    cov_pi = var * np.array([[1.0, rho], [rho, 1.0]])
    cov_r = np.array([[var, var], [var, var + 1.0]])
    return n * gaussian_kl(np.zeros(2), cov_pi, np.zeros(2), cov_r)


def gaussian_candidate_entropy(n: int, rho: float, var: float = 0.25) -> EntropyReport:
    """Decomposition ``H(pi | R_01) + E_pi[|X + Y|^2 / 2]`` for the Gaussian candidate."""
    endpoint = gaussian_endpoint_entropy(n, rho, var)
    conditional = 0.5 * n * (2 * var + 2 * rho * var)
    return EntropyReport.from_terms(endpoint=endpoint, conditional=conditional)


# ---------------------------------------------------------------------------
# candidate measure


def _power_kernels(kernels):
    out = np.eye(kernels[0].shape[0])
    for K in kernels:
        out = out @ K
    return out


def candidate_entropy_bound(pi: Coupling, g: FlatGeometry | None = None,
                            kernels=None, resolution: int = 128) -> EntropyReport:
    """Entropy of the glued-bridge candidate built on ``pi``.

    Without ``kernels`` the continuum formula is used: the endpoint term is
    ``H(pi | R_01)`` with ``R_01`` the cell-averaged time-one kernel under
    the uniform initial law, and the conditional term integrates the bridge
    midpoint entropy at cell centres.

    With ``kernels`` (one reference transition matrix per step, an even
    number of them) the exact entropy of the discrete candidate
    ``sum pi(x, y) R(. | x, z, y) / N`` relative to the chain is returned;
    this is the bound that a discrete solver must respect.
    """
    if not pi.is_grid:
        raise UnsupportedGeometryError("the entropy bound needs a grid-supported coupling")
    g = pi.geometry if g is None else g
    _check_compact(g)
    P = pi.matrix
    N = P.shape[0]
    if kernels is None:
        R01 = cell_kernel(g, pi.cells, 1.0) / N
        centers = cell_centers(g, pi.cells)
        H = bridge_entropy_matrix(g, centers, centers, resolution)
    else:
        T = len(kernels)
        if T % 2:
            raise ValueError("the discrete candidate needs an even number of steps")
        K1 = _power_kernels(kernels[: T // 2])
        K2 = _power_kernels(kernels[T // 2:])
        K = K1 @ K2
        R01 = K / N
        # midpoint law of the discrete bridge: K1[x, z] K2[z, y] / K[x, y]
        # H(unif | bridge) = -log N - mean_z log K1[x,z] - mean_z log K2[z,y] + log K[x,y];
        # pairs with K[x, y] = 0 give NaN here and are caught by the endpoint term
        with np.errstate(divide="ignore", invalid="ignore"):
            lK1, lK2, lK = np.log(K1), np.log(K2), np.log(K)
            H = -math.log(N) - lK1.mean(1)[:, None] - lK2.mean(0)[None, :] + lK
    endpoint = _kl_arrays(P, R01)
    with np.errstate(invalid="ignore"):
        conditional = float(np.sum(np.where(P > 0, P * H, 0.0)))
    if not math.isfinite(endpoint):
        return EntropyReport.infinite(endpoint=math.inf, conditional=conditional)
    if not math.isfinite(conditional):
        return EntropyReport.infinite(endpoint=endpoint, conditional=math.inf)
    return EntropyReport.from_terms(endpoint=endpoint, conditional=conditional)


# ---------------------------------------------------------------------------
# path measures


def path_measure_entropy(m, reference=None) -> EntropyReport:
    """Exact ``H(Q | R)`` of a factorised discrete path measure.

    ``log dQ/dR = log w(z_0, z_T) + sum_t log a_t(z_t) - log Z``. The
    report carries the chain-rule split into ``H(Q_0 | R_0)`` and the
    averaged conditional entropy ``sum_x Q_0(x) H(Q^x | R^x)``, the latter
    computed row by row from the start-conditioned marginals.

    Parameters
    ----------
    m : DiscretePathMeasure
    reference : list of ndarray, optional
        Reference kernels; must coincide with those stored in ``m``.
    """
    if reference is not None:
        if len(reference) != len(m.kernels) or any(
                not np.array_equal(a, b) for a, b in zip(reference, m.kernels)):
            raise ValueError("path measure and reference use different kernels")
    logZ = m.log_partition()
    E = m.endpoint_law()
    joints = [m.start_joint(s) for s in range(m.T + 1)]
    q0 = joints[0].sum(1)

    def fin(v):
        return np.where(np.isfinite(v), v, 0.0)

    # per-start expectations of log dQ/dR + log Z
    row = np.sum(E * fin(m.log_w), axis=1)
    for s, J in enumerate(joints):
        row = row + J @ fin(m.log_a[s])
    total = float(row.sum() - logZ)
    initial = _kl_arrays(q0, m.r0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond_rows = np.where(q0 > 0, row / np.where(q0 > 0, q0, 1) - logZ
                             - np.log(np.where(q0 > 0, q0, 1) / m.r0), 0.0)
    conditional = float(np.sum(q0 * cond_rows))
    return EntropyReport(max(total, 0.0), True,
                         {"initial": initial, "conditional": conditional})


def kinetic_energy_estimate(e, v, rule: str = "trapezoid") -> float:
    """``(1/2) E[int |v_t(X_t)|^2 dt]`` along the paths of ``e``.

    ``rule="trapezoid"`` needs the field on every ensemble time;
    ``rule="left"`` needs it on all times but the last and uses the left
    Riemann sum, matching one-step drift estimates.
    """
    times = e.grid.times
    if rule == "trapezoid":
        if v.times.size != times.size or not np.allclose(v.times, times, atol=1e-12):
            raise ValueError("field and ensemble use different time grids")
        sq = np.stack([np.sum(v.evaluate(k, e.positions[:, k]) ** 2, -1)
                       for k in range(times.size)], axis=1)
        sq = np.nan_to_num(sq)
        integral = np.trapezoid(sq, times, axis=1) if hasattr(np, "trapezoid") \
            else np.trapz(sq, times, axis=1)
    elif rule == "left":
        if v.times.size != times.size - 1 or not np.allclose(v.times, times[:-1], atol=1e-12):
            raise ValueError("left rule needs the field on all times but the last")
        sq = np.stack([np.sum(v.evaluate(k, e.positions[:, k]) ** 2, -1)
                       for k in range(times.size - 1)], axis=1)
        integral = np.nan_to_num(sq) @ np.diff(times)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return 0.5 * float(np.sum(e.weights * integral))
