"""CSV, JSON and binary export of ensembles, fields, potentials and solutions.

Every artifact carries a format tag so readers can reject files they do not
understand. CSV files start with a ``# <tag>`` comment line followed by a
header row.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .geometry import FlatGeometry, QuotientMap, _cells_tuple
from .measures import VelocityField

FORMAT_VERSION = 1
ENSEMBLE_CSV = f"bslab.ensemble.csv/v{FORMAT_VERSION}"
SUMMARY_BIN = f"bslab.summary.bin/v{FORMAT_VERSION}"
FIELD_CSV = f"bslab.field.csv/v{FORMAT_VERSION}"
POTENTIAL_CSV = f"bslab.potential.csv/v{FORMAT_VERSION}"
MARGINAL_CSV = f"bslab.marginals.csv/v{FORMAT_VERSION}"
_MAGIC = b"BSLB"


class FormatError(ValueError):
    """Raised when a file does not carry the expected format tag."""


def _fmt(x: float) -> str:
    return repr(float(x))


def _open_csv(path, tag: str, header: list[str]):
    fh = open(path, "w", newline="")
    fh.write(f"# {tag}\n")
    w = csv.writer(fh)
    w.writerow(header)
    return fh, w


def _read_csv(path, tag: str) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# {tag}":
            raise FormatError(f"{path}: expected format {tag!r}, found {first!r}")
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float) if body else np.empty((0, len(header)))
    return header, data


def geometry_dict(g) -> dict:
    return g.to_dict()


def geometry_from_dict(d: dict):
    if d.get("kind") == "quotient":
        return QuotientMap.from_dict(d)
    return FlatGeometry.from_dict(d)


# ---------------------------------------------------------------------------
# path ensembles


def write_ensemble_csv(e, path) -> Path:
    """One row per (path, time): ``path_id, t, x0[, x1 ...], weight``."""
    path = Path(path)
    d = e.dim
    header = ["path_id", "t"] + [f"x{i}" for i in range(d)] + ["weight"]
    fh, w = _open_csv(path, ENSEMBLE_CSV, header)
    with fh:
        times = e.times
        for i in range(e.n_paths):
            wt = _fmt(e.weights[i])
            for k, t in enumerate(times):
                w.writerow([i, _fmt(t)] + [_fmt(v) for v in e.positions[i, k]] + [wt])
    return path


def read_ensemble_csv(path, geometry):
    from .sampling import PathEnsemble, TimeGrid

    header, data = _read_csv(path, ENSEMBLE_CSV)
    d = len(header) - 3
    ids = data[:, 0].astype(np.int64)
    n = int(ids.max()) + 1 if ids.size else 0
    times = np.unique(data[:, 1])
    pos = np.empty((n, times.size, d))
    k = np.searchsorted(times, data[:, 1])
    pos[ids, k] = data[:, 2:2 + d]
    weights = np.zeros(n)
    weights[ids] = data[:, -1]
    return PathEnsemble(TimeGrid(times), pos, geometry, weights)


def write_summary(e, path, cells, bounds=None) -> Path:
    """Per-time histograms as a binary blob with a JSON header.

    Layout: ``b"BSLB"``, little-endian uint32 header length, UTF-8 JSON
    header, then ``float64`` masses of shape ``(n_times, *cells)`` in C order.
    """
    from .sampling import marginal_histogram

    path = Path(path)
    g = e.geometry
    dim = e.dim
    cells = _cells_tuple(cells, dim)
    hists = np.stack([marginal_histogram(e, t, cells, bounds).reshape() for t in e.times])
    header = {
        "format": SUMMARY_BIN,
        "geometry": geometry_dict(g),
        "cells": list(cells),
        "bounds": None if bounds is None else [list(map(float, b)) for b in bounds],
        "times": [float(t) for t in e.times],
        "n_paths": int(e.n_paths),
        "dtype": "<f8",
        "shape": list(hists.shape),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(hists, dtype="<f8").tobytes())
    return path


def read_summary(path) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: not a summary file")
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + n])
    if header.get("format") != SUMMARY_BIN:
        raise FormatError(f"{path}: unsupported summary format {header.get('format')!r}")
    data = np.frombuffer(raw[8 + n:], dtype="<f8").reshape(header["shape"])
    return header, data


# ---------------------------------------------------------------------------
# fields, potentials, marginals


def write_field_csv(v: VelocityField, path) -> Path:
    """Rows ``t, x0.., v0.., count``; NaN marks unreported cells."""
    path = Path(path)
    d = v.dim
    header = ["t"] + [f"x{i}" for i in range(d)] + [f"v{i}" for i in range(d)] + ["count"]
    mesh = np.stack(np.meshgrid(*v.axes, indexing="ij"), -1).reshape(-1, d)
    fh, w = _open_csv(path, FIELD_CSV, header)
    with fh:
        for k, t in enumerate(v.times):
            vals = v.values[k].reshape(-1, d)
            cnt = (v.counts[k].ravel() if v.counts is not None
                   else np.full(mesh.shape[0], np.nan))
            for x, u, c in zip(mesh, vals, cnt):
                w.writerow([_fmt(t)] + [_fmt(a) for a in x] + [_fmt(a) for a in u] + [_fmt(c)])
    return path


def read_field_csv(path, geometry: FlatGeometry) -> VelocityField:
    header, data = _read_csv(path, FIELD_CSV)
    d = (len(header) - 2) // 2
    times = np.unique(data[:, 0])
    axes = tuple(np.unique(data[:, 1 + i]) for i in range(d))
    shape = (times.size,) + tuple(a.size for a in axes)
    vals = data[:, 1 + d:1 + 2 * d].reshape(shape + (d,))
    counts = data[:, -1].reshape(shape)
    if np.all(np.isnan(counts)):
        counts = None
    return VelocityField(times, axes, vals, geometry, counts=counts)


def write_potential_csv(pg, path) -> Path:
    """Rows ``t, x0.., psi, psi_left`` over the space-time grid."""
    path = Path(path)
    d = len(pg.grid.shape)
    pts = pg.grid.points().reshape(-1, d)
    header = ["t"] + [f"x{i}" for i in range(d)] + ["psi", "psi_left"]
    fh, w = _open_csv(path, POTENTIAL_CSV, header)
    with fh:
        for n, t in enumerate(pg.times):
            cur = pg.values[n].ravel()
            left = pg.left_value(n).ravel()
            for x, a, b in zip(pts, cur, left):
                w.writerow([_fmt(t)] + [_fmt(c) for c in x] + [_fmt(a), _fmt(b)])
    return path


def write_marginals_csv(m, path) -> Path:
    """Rows ``t, cell, x0.., mass`` for every time marginal of a discrete measure."""
    from .geometry import cell_centers

    path = Path(path)
    centers = cell_centers(m.geometry, m.cells)
    d = centers.shape[1]
    header = ["t", "cell"] + [f"x{i}" for i in range(d)] + ["mass"]
    fh, w = _open_csv(path, MARGINAL_CSV, header)
    with fh:
        for t, mu in zip(m.grid.times, m.marginals()):
            for j, (x, p) in enumerate(zip(centers, mu)):
                w.writerow([_fmt(t), j] + [_fmt(c) for c in x] + [_fmt(p)])
    return path


def write_rows_csv(path, tag: str, header: list[str], rows) -> Path:
    """Generic tagged CSV for small tables (histories, refinement studies)."""
    path = Path(path)
    fh, w = _open_csv(path, tag, header)
    with fh:
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


# ---------------------------------------------------------------------------
# JSON


def to_jsonable(obj):
    """Recursively convert numpy scalars and arrays; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path
