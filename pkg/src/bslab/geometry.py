"""
Flat state spaces, reflection-group quotients and heat kernels.

Every compact geometry carries its *normalised* volume measure, so heat
kernels returned here are densities with respect to ``vol`` with
``vol(M) = 1``. The generator convention is ``(1/2) Laplacian``: the free
Gaussian factor has variance ``t`` per axis.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr


class GeometryError(ValueError):
    """Invalid point or geometry descriptor."""


class UnsupportedGeometryError(GeometryError):
    """Operation is not defined for this kind of geometry."""


class CutLocusError(GeometryError):
    """The shortest displacement between two points is not unique."""


class CornerError(GeometryError):
    """Point lies on two or more boundary faces."""


class ConstraintViolationError(ValueError):
    """A measure does not satisfy a required marginal constraint."""


class Kind(str, enum.Enum):
    CIRCLE = "circle"
    TORUS = "torus"
    INTERVAL = "interval"
    BOX = "box"
    GAUSSIAN = "gaussian"


_PERIODIC = (Kind.CIRCLE, Kind.TORUS)
_BOUNDED = (Kind.INTERVAL, Kind.BOX)


@dataclass(frozen=True)
class FlatGeometry:
    """Descriptor of a flat state space.

    Parameters
    ----------
    kind : Kind or str
        One of circle, torus, interval, box, gaussian.
    lengths : tuple of float
        Period (circle/torus) or side length (interval/box) per axis.
        Empty for the Euclidean Gaussian space.
    dim : int, optional
        Only needed for ``gaussian``; otherwise it equals ``len(lengths)``.
    """

    kind: Kind
    lengths: tuple[float, ...] = ()
    dim: int = 0

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        lengths = tuple(float(v) for v in self.lengths)
        object.__setattr__(self, "lengths", lengths)
        if kind is Kind.GAUSSIAN:
            if lengths:
                raise GeometryError("gaussian geometry takes no lengths")
            if int(self.dim) < 1:
                raise GeometryError("gaussian geometry needs dim >= 1")
            object.__setattr__(self, "dim", int(self.dim))
            return
        if not lengths:
            raise GeometryError(f"{kind.value} geometry needs lengths")
        if any(not (v > 0 and math.isfinite(v)) for v in lengths):
            raise GeometryError("lengths must be strictly positive")
        if kind in (Kind.CIRCLE, Kind.INTERVAL) and len(lengths) != 1:
            raise GeometryError(f"{kind.value} is one-dimensional")
        if self.dim not in (0, len(lengths)):
            raise GeometryError("dim must equal the number of lengths")
        object.__setattr__(self, "dim", len(lengths))

    @property
    def periodic(self) -> bool:
        return self.kind in _PERIODIC

    @property
    def has_boundary(self) -> bool:
        return self.kind in _BOUNDED

    @property
    def compact(self) -> bool:
        return self.kind is not Kind.GAUSSIAN

    @property
    def volume(self) -> float:
        """Lebesgue volume of the domain (not the normalised one)."""
        if not self.compact:
            return math.inf
        return float(np.prod(self.lengths))

    @property
    def length_array(self) -> np.ndarray:
        return np.asarray(self.lengths, dtype=float)

    def covering(self) -> "FlatGeometry":
        """Torus whose quotient by axis reflections is this box."""
        if not self.has_boundary:
            raise UnsupportedGeometryError("only interval/box have a covering torus")
        doubled = tuple(2 * v for v in self.lengths)
        return circle(doubled[0]) if self.kind is Kind.INTERVAL else torus(*doubled)

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "dim": self.dim}
        if self.lengths:
            out["lengths"] = list(self.lengths)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FlatGeometry":
        return cls(Kind(data["kind"]), tuple(data.get("lengths", ())), int(data.get("dim", 0)))


def circle(length: float = 1.0) -> FlatGeometry:
    return FlatGeometry(Kind.CIRCLE, (length,))


def torus(*lengths: float) -> FlatGeometry:
    return FlatGeometry(Kind.TORUS, tuple(lengths))


def interval(length: float = 1.0) -> FlatGeometry:
    return FlatGeometry(Kind.INTERVAL, (length,))


def box(*lengths: float) -> FlatGeometry:
    return FlatGeometry(Kind.BOX, tuple(lengths))


def euclidean(dim: int) -> FlatGeometry:
    return FlatGeometry(Kind.GAUSSIAN, (), dim)


def as_points(x, dim: int) -> np.ndarray:
    """Coerce ``x`` to an array of shape ``(..., dim)``.

    For one-dimensional geometries scalars and plain 1-d arrays of points
    are accepted and get a trailing axis appended.
    """
    arr = np.asarray(x, dtype=float)
    if dim == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
        arr = arr[..., None]
    if arr.shape[-1] != dim:
        raise GeometryError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr


def _restore(result: np.ndarray, x, dim: int):
    arr = np.asarray(x)
    if dim == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
        result = result[..., 0]
        if arr.ndim == 0:
            return float(result)
    return result


def wrap(x, g: FlatGeometry):
    """Canonical representative in ``[0, L_i)`` of a point on a torus."""
    if not g.periodic:
        raise UnsupportedGeometryError(f"wrap needs a periodic geometry, got {g.kind.value}")
    pts = as_points(x, g.dim)
    return _restore(_wrap(pts, g.length_array), x, g.dim)


def _wrap(pts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    out = np.mod(pts, lengths)
    # np.mod can return L for tiny negative inputs
    return np.where(out >= lengths, out - lengths, out)


def _fold_box(pts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    period = 2 * lengths
    y = _wrap(pts, period)
    return np.where(y > lengths, period - y, y)


def contains(x, g: FlatGeometry, atol: float = 1e-12) -> np.ndarray:
    """Whether points are valid coordinates of ``g``."""
    pts = as_points(x, g.dim)
    if not g.compact:
        return np.all(np.isfinite(pts), axis=-1)
    L = g.length_array
    if g.periodic:
        return np.all((pts >= 0) & (pts < L), axis=-1)
    return np.all((pts >= -atol * L) & (pts <= L * (1 + atol)), axis=-1)


def log_map(x, y, g: FlatGeometry, rtol: float = 1e-12):
    """Shortest displacement ``v`` with ``x + v = y`` (modulo the lattice).

    Raises
    ------
    CutLocusError
        If on some periodic axis the displacement is exactly half a period.
    """
    v, ok = log_map_masked(x, y, g, rtol)
    if not np.all(ok):
        raise CutLocusError("y lies on the cut locus of x")
    dim = g.dim
    return _restore(v, np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))[0], dim)


def log_map_masked(x, y, g: FlatGeometry, rtol: float = 1e-12):
    """Vectorised ``log_map`` returning ``(v, valid)`` instead of raising."""
    px, py = as_points(x, g.dim), as_points(y, g.dim)
    d = py - px
    if not g.periodic:
        return d, np.ones(d.shape[:-1], dtype=bool)
    L = g.length_array
    d = d - L * np.round(d / L)
    ok = np.all(np.abs(d) < L / 2 * (1 - rtol), axis=-1)
    return d, ok


def inward_normal(x, g: FlatGeometry, atol: float = 1e-12):
    """Unit inward normal at a regular boundary point, ``None`` in the interior.

    Raises
    ------
    CornerError
        At points where two or more faces meet.
    """
    if not g.has_boundary:
        raise UnsupportedGeometryError("geometry has no boundary")
    p = as_points(x, g.dim)
    if p.ndim != 1:
        raise GeometryError("inward_normal takes a single point")
    L = g.length_array
    if not contains(p, g, atol):
        raise GeometryError("point outside the domain")
    low = np.abs(p) <= atol * L
    high = np.abs(p - L) <= atol * L
    n_active = int(low.sum() + high.sum())
    if n_active == 0:
        return None
    if n_active > 1:
        raise CornerError(f"{p} is a corner point")
    nu = low.astype(float) - high.astype(float)
    return nu[0] if g.dim == 1 and np.ndim(x) == 0 else nu


# ---------------------------------------------------------------------------
# heat kernels


@dataclass(frozen=True)
class HeatKernelParams:
    """Truncation of image sums.

    The per-axis image count is ``ceil(sqrt(2 t ln(1/tail_tolerance)) / L) + 1``
    capped at ``max_images``.
    """

    tail_tolerance: float = 1e-12
    max_images: int = 200

    def __post_init__(self):
        if not (0 < self.tail_tolerance < 1):
            raise ValueError("tail_tolerance must lie in (0, 1)")
        if self.max_images < 1:
            raise ValueError("max_images must be positive")

    def n_images(self, t: float, length: float) -> int:
        k = math.ceil(math.sqrt(2 * t * math.log(1 / self.tail_tolerance)) / length) + 1
        return min(k, self.max_images)


DEFAULT_KERNEL = HeatKernelParams()


def _gauss(u, t):
    return np.exp(-(u * u) / (2 * t)) / math.sqrt(2 * math.pi * t)


def _axis_kernel(kind: Kind, d_or_xy, t, length, params) -> np.ndarray:
    """One-axis kernel with respect to Lebesgue measure."""
    K = params.n_images(t, length)
    ks = np.arange(-K, K + 1)
    if kind in _PERIODIC:
        d = d_or_xy
        return _gauss(d[..., None] + ks * length, t).sum(-1)
    x, y = d_or_xy
    shifts = 2 * length * ks
    direct = _gauss((y - x)[..., None] + shifts, t)
    mirrored = _gauss((y + x)[..., None] + shifts, t)
    return (direct + mirrored).sum(-1)


def heat_kernel(g: FlatGeometry, t: float, x, y, params: HeatKernelParams = DEFAULT_KERNEL):
    """Transition density of (reflected) Brownian motion with generator ``Delta/2``.

    Densities are taken with respect to the normalised volume on compact
    geometries and Lebesgue measure on Euclidean space. Periodic axes use
    the wrapped Gaussian image sum; interval/box axes use the Neumann
    reflection method. ``x`` and ``y`` broadcast against each other.
    """
    if not t > 0:
        raise GeometryError("heat kernel needs t > 0")
    px, py = as_points(x, g.dim), as_points(y, g.dim)
    px, py = np.broadcast_arrays(px, py)
    if g.kind is Kind.GAUSSIAN:
        out = np.prod(_gauss(py - px, t), axis=-1)
    else:
        out = np.ones(px.shape[:-1])
        for i, L in enumerate(g.lengths):
            if g.periodic:
                ax = _axis_kernel(g.kind, py[..., i] - px[..., i], t, L, params)
            else:
                ax = _axis_kernel(g.kind, (px[..., i], py[..., i]), t, L, params)
            out = out * ax * L
    if out.ndim == 0:
        return float(out)
    return out


def _second_diff_primitive(d: np.ndarray, h: float, sigma: float) -> np.ndarray:
    """``int_{cell i} int_{cell j} phi_sigma(y - x) dy dx`` for ``j - i = d``.

    Uses the primitive ``J(u) = u Phi(u/s) + s phi(u/s)`` of the Gaussian CDF;
    the linear part of ``J`` is removed analytically so far-apart cells do
    not lose precision.
    """

    def jm(u):  # J(-|u|)
        z = -np.abs(u) / sigma
        return sigma * (z * ndtr(z) + np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi))

    u = d * h
    out = jm(u + h) - 2 * jm(u) + jm(u - h)
    return out + h * (d == 0)


def cell_kernel_1d(kind: Kind, n: int, length: float, t: float,
                   params: HeatKernelParams = DEFAULT_KERNEL) -> np.ndarray:
    """Cell-averaged one-axis transition matrix on ``n`` equal cells.

    Entry ``(i, j)`` is the probability of landing in cell ``j`` after time
    ``t`` when starting uniformly in cell ``i``. Rows are renormalised to
    absorb rounding.
    """
    if not t > 0:
        raise GeometryError("need t > 0")
    h = length / n
    sigma = math.sqrt(t)
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    K = params.n_images(t, length)
    S = np.zeros((n, n))
    if kind in _PERIODIC:
        for k in range(-K - 1, K + 2):
            S += _second_diff_primitive(j - i + k * n, h, sigma)
    elif kind in _BOUNDED:
        for k in range(-K - 1, K + 2):
            S += _second_diff_primitive(j - i + 2 * k * n, h, sigma)
            S += _second_diff_primitive(-j - 1 - i + 2 * k * n, h, sigma)
    else:
        raise UnsupportedGeometryError("cell kernels need a compact geometry")
    S = np.maximum(S, 0.0)
    S = 0.5 * (S + S.T)
    return S / S.sum(axis=1, keepdims=True)


def cell_kernel(g: FlatGeometry, cells, t: float,
                params: HeatKernelParams = DEFAULT_KERNEL) -> np.ndarray:
    """Tensor-product cell-averaged kernel on a regular grid (C-order cells)."""
    cells = _cells_tuple(cells, g.dim)
    out = np.ones((1, 1))
    for n, L in zip(cells, g.lengths):
        axis_kind = Kind.CIRCLE if g.periodic else Kind.INTERVAL
        out = np.kron(out, cell_kernel_1d(axis_kind, n, L, t, params))
    return out


def _cells_tuple(cells, dim: int) -> tuple[int, ...]:
    if np.isscalar(cells):
        return (int(cells),) * dim
    cells = tuple(int(c) for c in cells)
    if len(cells) != dim:
        raise GeometryError("need one cell count per axis")
    return cells


def cell_centers(g: FlatGeometry, cells) -> np.ndarray:
    """Cell centres of a regular grid, shape ``(prod(cells), dim)`` in C order."""
    cells = _cells_tuple(cells, g.dim)
    axes = [(np.arange(n) + 0.5) * L / n for n, L in zip(cells, g.lengths)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def cell_index(points, g: FlatGeometry, cells, bounds=None) -> np.ndarray:
    """Flat C-order cell index of each point (clipped to the grid)."""
    cells = _cells_tuple(cells, g.dim)
    pts = as_points(points, g.dim)
    if bounds is None:
        lo = np.zeros(g.dim)
        hi = g.length_array
    else:
        lo, hi = (np.asarray(b, float) for b in bounds)
    n = np.asarray(cells)
    idx = np.floor((pts - lo) / (hi - lo) * n).astype(np.int64)
    idx = np.clip(idx, 0, n - 1)
    return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), cells)


# ---------------------------------------------------------------------------
# reflection groups


@dataclass(frozen=True)
class Isometry:
    """Affine lattice-preserving isometry ``x -> signs * x[perm] + offset``."""

    perm: tuple[int, ...]
    signs: tuple[int, ...]
    offset: tuple[float, ...]

    def apply(self, pts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        p = np.asarray(pts)[..., list(self.perm)]
        return _wrap(np.asarray(self.signs) * p + np.asarray(self.offset), lengths)

    def compose(self, other: "Isometry", lengths: np.ndarray) -> "Isometry":
        """``self o other``."""
        p_g, p_h = np.asarray(self.perm), np.asarray(other.perm)
        s_g, s_h = np.asarray(self.signs), np.asarray(other.signs)
        c_h = np.asarray(other.offset)
        perm = p_h[p_g]
        signs = s_g * s_h[p_g]
        offset = _wrap(s_g * c_h[p_g] + np.asarray(self.offset), lengths)
        return _isometry(perm, signs, offset, lengths)

    def linear_part(self) -> np.ndarray:
        n = len(self.perm)
        A = np.zeros((n, n))
        A[np.arange(n), list(self.perm)] = self.signs
        return A


def _isometry(perm, signs, offset, lengths) -> Isometry:
    off = _wrap(np.asarray(offset, float), lengths)
    # snap offsets to a fine lattice so equality is exact
    off = np.round(off / lengths * 2**20) / 2**20 * lengths
    off = np.where(np.isclose(off, lengths), 0.0, off)
    return Isometry(tuple(int(v) for v in perm), tuple(int(v) for v in signs),
                    tuple(float(v) for v in off))


def identity_isometry(dim: int) -> Isometry:
    return Isometry(tuple(range(dim)), (1,) * dim, (0.0,) * dim)


def axis_reflection(axis: int, fixed: float, dim: int, lengths) -> Isometry:
    """Reflection ``x_axis -> 2 * fixed - x_axis``."""
    lengths = np.asarray(lengths, float)
    signs = np.ones(dim, int)
    signs[axis] = -1
    offset = np.zeros(dim)
    offset[axis] = 2 * fixed
    return _isometry(range(dim), signs, offset, lengths)


def coordinate_swap(i: int, j: int, dim: int, lengths) -> Isometry:
    lengths = np.asarray(lengths, float)
    if not np.isclose(lengths[i], lengths[j]):
        raise GeometryError("swapping axes of different periods is not an isometry")
    perm = list(range(dim))
    perm[i], perm[j] = perm[j], perm[i]
    return _isometry(perm, np.ones(dim, int), np.zeros(dim), lengths)


@dataclass(frozen=True)
class ReflectionGroup:
    """Finite group of torus isometries generated by reflections and swaps."""

    lengths: tuple[float, ...]
    generators: tuple[Isometry, ...]
    elements: tuple[Isometry, ...] = field(default=())

    def __post_init__(self):
        L = np.asarray(self.lengths, float)
        for g in self.generators:
            if not np.allclose(L[list(g.perm)], L):
                raise GeometryError("generator does not preserve the lattice")
        if not self.elements:
            object.__setattr__(self, "elements", _close(self.generators, L))

    @property
    def order(self) -> int:
        return len(self.elements)

    def index(self, g: Isometry) -> int:
        return self.elements.index(g)


def _close(generators, lengths) -> tuple[Isometry, ...]:
    dim = len(lengths)
    elements = [identity_isometry(dim)]
    seen = set(elements)
    frontier = list(elements)
    while frontier:
        new = []
        for a in frontier:
            for gen in generators:
                b = gen.compose(a, lengths)
                if b not in seen:
                    seen.add(b)
                    elements.append(b)
                    new.append(b)
        frontier = new
    return tuple(elements)


# ---------------------------------------------------------------------------
# quotients


@dataclass(frozen=True)
class QuotientMap:
    """Quotient of a flat torus by a reflection group.

    Two families are supported: ``box`` (all axis reflections; the quotient
    is the box of half side lengths) and ``triangle`` (a square box folded
    once more along its diagonal, giving the isosceles right triangle
    ``{0 <= y <= x <= a}``).
    """

    covering: FlatGeometry
    group: ReflectionGroup
    kind: str

    @property
    def quotient(self) -> FlatGeometry:
        """Box containing the fundamental domain (the square for triangles)."""
        half = tuple(v / 2 for v in self.covering.lengths)
        return interval(half[0]) if self.covering.dim == 1 else box(*half)

    @property
    def dim(self) -> int:
        return self.covering.dim

    @property
    def order(self) -> int:
        return self.group.order

    @property
    def volume(self) -> float:
        return self.covering.volume / self.order

    def fold(self, x):
        """Map covering-torus points into the closed fundamental domain."""
        pts = as_points(x, self.dim)
        out = _fold_box(pts, self.quotient.length_array)
        if self.kind == "triangle":
            swap = out[..., 1] > out[..., 0]
            out = np.where(swap[..., None], out[..., ::-1], out)
        return _restore(out, x, self.dim)

    def lift(self, x, g: int):
        """Image of a fundamental-domain point under group element ``g``."""
        if not 0 <= int(g) < self.order:
            raise IndexError(f"group element {g} out of range [0, {self.order})")
        pts = as_points(x, self.dim)
        out = self.group.elements[int(g)].apply(pts, self.covering.length_array)
        return _restore(out, x, self.dim)

    def in_fundamental_domain(self, x, atol: float = 1e-12) -> np.ndarray:
        pts = as_points(x, self.dim)
        ok = contains(pts, self.quotient, atol)
        if self.kind == "triangle":
            ok = ok & (pts[..., 1] <= pts[..., 0] + atol)
        return ok

    def inward_normal(self, x, atol: float = 1e-12):
        """Inward normal of the fundamental domain (faces include the diagonal)."""
        if self.kind == "box":
            return inward_normal(x, self.quotient, atol)
        p = as_points(x, 2)
        a = self.quotient.lengths[0]
        if not self.in_fundamental_domain(p, atol):
            raise GeometryError("point outside the fundamental domain")
        faces = []
        if abs(p[1]) <= atol * a:
            faces.append(np.array([0.0, 1.0]))
        if abs(p[0] - a) <= atol * a:
            faces.append(np.array([-1.0, 0.0]))
        if abs(p[0] - p[1]) <= atol * a:
            faces.append(np.array([1.0, -1.0]) / math.sqrt(2))
        if not faces:
            return None
        if len(faces) > 1:
            raise CornerError(f"{p} is a corner point")
        return faces[0]

    def to_dict(self) -> dict:
        return {"kind": "quotient", "family": self.kind, "covering": self.covering.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "QuotientMap":
        cov = FlatGeometry.from_dict(data["covering"])
        if data["family"] == "box":
            return box_quotient(cov)
        if data["family"] == "triangle":
            return triangle_quotient(cov.lengths[0] / 2)
        raise GeometryError(f"unknown quotient family {data['family']!r}")


def box_quotient(covering: FlatGeometry) -> QuotientMap:
    """Torus ``(2a_1, ..., 2a_n)`` folded onto the box ``(a_1, ..., a_n)``."""
    if not covering.periodic:
        raise UnsupportedGeometryError("covering space must be a torus")
    L = covering.length_array
    gens = tuple(axis_reflection(i, L[i] / 2, covering.dim, L) for i in range(covering.dim))
    return QuotientMap(covering, ReflectionGroup(covering.lengths, gens), "box")


def triangle_quotient(side: float = 1.0) -> QuotientMap:
    """Isosceles right triangle of leg ``side`` as a quotient of the torus ``(2 side)^2``."""
    cov = torus(2 * side, 2 * side)
    L = cov.length_array
    gens = (axis_reflection(0, side, 2, L), axis_reflection(1, side, 2, L),
            coordinate_swap(0, 1, 2, L))
    return QuotientMap(cov, ReflectionGroup(cov.lengths, gens), "triangle")


def quotient_heat_kernel(q: QuotientMap, t: float, x, y,
                         params: HeatKernelParams = DEFAULT_KERNEL):
    """Heat kernel of the quotient, w.r.t. its normalised volume.

    Obtained by summing the covering kernel over the group orbit of ``y``:
    ``p_N(x, y) = sum_g p_M(x, g y)`` in Lebesgue densities, which is
    ``sum_g p_M(x, g y) / |G|`` once both sides are normalised.
    """
    px, py = np.broadcast_arrays(as_points(x, q.dim), as_points(y, q.dim))
    L = q.covering.length_array
    total = sum(heat_kernel(q.covering, t, px, g.apply(py, L), params)
                for g in q.group.elements)
    return total / q.order


@dataclass(frozen=True)
class OrbitGrid:
    """Regular covering-torus grid partitioned into group orbits.

    ``labels[c]`` is the orbit of covering cell ``c``; orbits are ordered by
    the quotient-box cell that contains their folded centre, so for box
    quotients orbit ``k`` is quotient cell ``k`` in C order.
    """

    covering_cells: tuple[int, ...]
    labels: np.ndarray
    sizes: np.ndarray
    quotient_index: np.ndarray

    @property
    def n_orbits(self) -> int:
        return len(self.sizes)

    @property
    def volumes(self) -> np.ndarray:
        """Normalised quotient volume of each orbit cell."""
        return self.sizes / self.labels.size


def orbit_grid(q: QuotientMap, cells) -> OrbitGrid:
    """Orbit decomposition of the covering grid with ``2 * cells`` per axis.

    ``cells`` counts quotient-box cells per axis.
    """
    cells = _cells_tuple(cells, q.dim)
    cov_cells = tuple(2 * c for c in cells)
    centers = cell_centers(q.covering, cov_cells)
    L = q.covering.length_array
    images = np.stack([cell_index(g.apply(centers, L), q.covering, cov_cells)
                       for g in q.group.elements])
    canon = images.min(axis=0)
    folded = np.asarray(q.fold(centers)).reshape(-1, q.dim)
    qidx = cell_index(folded, q.quotient, cells)
    uniq, first = np.unique(canon, return_index=True)
    order = np.argsort(qidx[first], kind="stable")
    relabel = np.empty(len(uniq), dtype=np.int64)
    relabel[order] = np.arange(len(uniq))
    labels = relabel[np.searchsorted(uniq, canon)]
    sizes = np.bincount(labels, minlength=len(uniq))
    return OrbitGrid(cov_cells, labels, sizes, qidx[first][order])


def lift_coupling(q: QuotientMap, pi_tilde, cells, atol: float = 1e-12):
    """Lift a quotient coupling with uniform marginals to the covering torus.

    Each orbit-cell pair ``(O, O')`` spreads its mass evenly over the
    ``|O| |O'|`` covering cell pairs, i.e.
    ``pi = |G|^-2 sum_{g,h} (q|_{gV} x q|_{hV})^{-1}_* pi_tilde``.

    Parameters
    ----------
    q : QuotientMap
    pi_tilde : ndarray, shape (n_orbits, n_orbits)
        Quotient coupling over orbit cells (quotient-box cells for ``box``).
    cells : int or tuple of int
        Quotient-box cells per axis.

    Returns
    -------
    Coupling on ``q.covering`` with ``2 * cells`` cells per axis.
    """
    from .measures import Coupling

    grid = orbit_grid(q, cells)
    P = np.asarray(getattr(pi_tilde, "matrix", pi_tilde), dtype=float)
    if P.shape != (grid.n_orbits, grid.n_orbits):
        raise GeometryError(f"quotient coupling must be {grid.n_orbits} x {grid.n_orbits}")
    if np.any(P < 0) or abs(P.sum() - 1) > atol * P.size:
        raise ConstraintViolationError("quotient coupling must be a probability matrix")
    vol = grid.volumes
    if (np.max(np.abs(P.sum(1) - vol)) > atol or np.max(np.abs(P.sum(0) - vol)) > atol):
        raise ConstraintViolationError("quotient coupling marginals are not uniform")
    lab = grid.labels
    sizes = grid.sizes.astype(float)
    lifted = P[np.ix_(lab, lab)] / np.outer(sizes[lab], sizes[lab])
    return Coupling(lifted, grid.covering_cells, q.covering)


def group_images(q: QuotientMap, x) -> np.ndarray:
    """All ``|G|`` images of ``x``; shape ``(|G|, ..., dim)``."""
    pts = as_points(x, q.dim)
    L = q.covering.length_array
    return np.stack([g.apply(pts, L) for g in q.group.elements])


def product_group_elements(dim: int):
    """Sign patterns of the box reflection group (used by samplers)."""
    return list(itertools.product((1, -1), repeat=dim))
