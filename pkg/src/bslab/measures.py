"""Grid measures and endpoint couplings shared by the sampling, entropy and solver modules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import (FlatGeometry, GeometryError, _cells_tuple, cell_centers,
                       cell_index)


@dataclass(frozen=True)
class GridMeasure:
    """Probability measure given by cell masses on a regular grid.

    Parameters
    ----------
    masses : ndarray
        Flat C-order cell masses; nonnegative and summing to one.
    cells : tuple of int
        Cells per axis.
    geometry : FlatGeometry
        State space the grid covers.
    bounds : tuple of ndarray, optional
        ``(lo, hi)`` corners of the gridded region. Defaults to the domain
        ``[0, L]``; required for Euclidean space.
    """

    masses: np.ndarray
    cells: tuple[int, ...]
    geometry: FlatGeometry
    bounds: tuple | None = None

    def __post_init__(self):
        cells = _cells_tuple(self.cells, self.geometry.dim)
        object.__setattr__(self, "cells", cells)
        m = np.asarray(self.masses, dtype=float).ravel()
        if m.size != int(np.prod(cells)):
            raise GeometryError("mass array does not match the cell counts")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("masses must be finite and nonnegative")
        total = m.sum()
        if abs(total - 1) > 1e-9:
            raise ValueError(f"masses sum to {total}, expected 1")
        object.__setattr__(self, "masses", m)
        if self.bounds is None and not self.geometry.compact:
            raise GeometryError("Euclidean grids need explicit bounds")

    @property
    def n(self) -> int:
        return self.masses.size

    def same_grid(self, other: "GridMeasure") -> bool:
        return self.cells == other.cells and self.geometry == other.geometry and \
            _bounds_equal(self.bounds, other.bounds)

    def centers(self) -> np.ndarray:
        if self.bounds is None:
            return cell_centers(self.geometry, self.cells)
        lo, hi = (np.asarray(b, float) for b in self.bounds)
        axes = [lo[i] + (np.arange(n) + 0.5) * (hi[i] - lo[i]) / n
                for i, n in enumerate(self.cells)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def reshape(self) -> np.ndarray:
        return self.masses.reshape(self.cells)

    @classmethod
    def uniform(cls, geometry: FlatGeometry, cells) -> "GridMeasure":
        cells = _cells_tuple(cells, geometry.dim)
        n = int(np.prod(cells))
        return cls(np.full(n, 1.0 / n), cells, geometry)


def _bounds_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return all(np.array_equal(np.asarray(x), np.asarray(y)) for x, y in zip(a, b))


PairSampler = Callable[[int, np.random.Generator], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class Coupling:
    """Probability measure on ``M x M``.

    Either grid-supported (``matrix[i, j]`` is the mass of the cell pair)
    or backed by a seeded sampler of point pairs.
    """

    matrix: np.ndarray | None
    cells: tuple[int, ...] | None
    geometry: FlatGeometry
    sampler: PairSampler | None = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self):
        if self.matrix is None:
            if self.sampler is None:
                raise ValueError("a coupling needs a matrix or a sampler")
            return
        cells = _cells_tuple(self.cells, self.geometry.dim)
        object.__setattr__(self, "cells", cells)
        P = np.asarray(self.matrix, dtype=float)
        n = int(np.prod(cells))
        if P.shape != (n, n):
            raise GeometryError(f"coupling matrix must be {n} x {n}")
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            raise ValueError("coupling entries must be finite and nonnegative")
        if abs(P.sum() - 1) > 1e-9:
            raise ValueError("coupling mass must be 1")
        object.__setattr__(self, "matrix", P)

    @property
    def is_grid(self) -> bool:
        return self.matrix is not None

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    def marginals(self) -> tuple[GridMeasure, GridMeasure]:
        if not self.is_grid:
            raise ValueError("exact marginals need a grid-supported coupling")
        P = self.matrix
        return (GridMeasure(P.sum(1), self.cells, self.geometry),
                GridMeasure(P.sum(0), self.cells, self.geometry))

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` endpoint pairs; grid couplings place points uniformly in cells."""
        if not self.is_grid:
            x, y = self.sampler(n, rng)
            return np.asarray(x, float).reshape(n, -1), np.asarray(y, float).reshape(n, -1)
        P = self.matrix.ravel()
        flat = rng.choice(P.size, size=n, p=P / P.sum())
        i, j = np.divmod(flat, self.n_cells)
        centers = cell_centers(self.geometry, self.cells)
        width = self.geometry.length_array / np.asarray(self.cells)
        x = centers[i] + (rng.random((n, self.geometry.dim)) - 0.5) * width
        y = centers[j] + (rng.random((n, self.geometry.dim)) - 0.5) * width
        return x, y

    def cell_pairs(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        return (cell_index(x, self.geometry, self.cells),
                cell_index(y, self.geometry, self.cells))

    @classmethod
    def independent(cls, mu: GridMeasure, nu: GridMeasure | None = None) -> "Coupling":
        nu = mu if nu is None else nu
        return cls(np.outer(mu.masses, nu.masses), mu.cells, mu.geometry, label="independent")

    @classmethod
    def diagonal(cls, geometry: FlatGeometry, cells) -> "Coupling":
        cells = _cells_tuple(cells, geometry.dim)
        n = int(np.prod(cells))
        return cls(np.eye(n) / n, cells, geometry, label="diagonal")


@dataclass(frozen=True)
class VelocityField:
    """Vector field sampled on a time grid times a tensor-product spatial grid.

    Parameters
    ----------
    times : ndarray, shape (n_t,)
    axes : tuple of ndarray
        Grid coordinates per axis (cell centres or nodes).
    values : ndarray, shape (n_t, *grid_shape, dim)
        NaN marks cells without enough data.
    geometry : FlatGeometry
    counts : ndarray, shape (n_t, *grid_shape), optional
        Number of samples behind each estimate.
    stderr : ndarray, same shape as ``values``, optional
    meta : dict
        Free-form boundary and estimator metadata.
    """

    times: np.ndarray
    axes: tuple
    values: np.ndarray
    geometry: FlatGeometry
    counts: np.ndarray | None = None
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, float)
        axes = tuple(np.asarray(a, float) for a in self.axes)
        vals = np.asarray(self.values, float)
        shape = (times.size,) + tuple(a.size for a in axes) + (len(axes),)
        if vals.shape != shape:
            raise GeometryError(f"values must have shape {shape}, got {vals.shape}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    def same_space(self, other: "VelocityField") -> bool:
        return self.geometry == other.geometry and len(self.axes) == len(other.axes) and \
            all(np.array_equal(a, b) for a, b in zip(self.axes, other.axes))

    def time_index(self, t: float, atol: float = 1e-12) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > atol:
            raise ValueError(f"t={t} is not a field time")
        return k

    def locate(self, points) -> tuple[np.ndarray, ...]:
        """Nearest grid index per axis for each point."""
        pts = np.asarray(points, float).reshape(-1, self.dim)
        idx = []
        for i, a in enumerate(self.axes):
            if a.size == 1:
                idx.append(np.zeros(len(pts), dtype=np.int64))
                continue
            step = a[1] - a[0]
            k = np.rint((pts[:, i] - a[0]) / step).astype(np.int64)
            if self.geometry.periodic:
                k = np.mod(k, a.size)
            idx.append(np.clip(k, 0, a.size - 1))
        return tuple(idx)

    def evaluate(self, k: int, points) -> np.ndarray:
        """Field at time index ``k`` looked up at the nearest grid point."""
        return self.values[(k,) + self.locate(points)]
