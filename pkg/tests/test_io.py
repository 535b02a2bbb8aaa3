import json
import math
import struct

import numpy as np
import pytest

from bslab import io
from bslab.geometry import FlatGeometry, box, circle, torus, triangle_quotient
from bslab.hjb import fourier_forcing, solve_hopf_cole
from bslab.sampling import TimeGrid, lazy_coupling, marginal_histogram, sample_reflected_bm
from bslab.solver import incompressible_problem, solve_ipfp


@pytest.fixture
def ensemble():
    return sample_reflected_bm(box(1.0, 2.0), "uniform", TimeGrid.uniform(4), seed=0, n_paths=50)


def test_ensemble_csv_roundtrip(tmp_path, ensemble):
    p = io.write_ensemble_csv(ensemble, tmp_path / "e.csv")
    assert p.read_text().splitlines()[0] == f"# {io.ENSEMBLE_CSV}"
    back = io.read_ensemble_csv(p, ensemble.geometry)
    np.testing.assert_array_equal(back.positions, ensemble.positions)
    np.testing.assert_array_equal(back.times, ensemble.times)
    np.testing.assert_allclose(back.weights, ensemble.weights, rtol=1e-15)


def test_wrong_tag_is_rejected(tmp_path, ensemble):
    p = io.write_ensemble_csv(ensemble, tmp_path / "e.csv")
    with pytest.raises(io.FormatError):
        io.read_field_csv(p, ensemble.geometry)
    bad = tmp_path / "bad.csv"
    bad.write_text("t,x0\n0,1\n")
    with pytest.raises(io.FormatError):
        io.read_ensemble_csv(bad, ensemble.geometry)


def test_summary_layout(tmp_path, ensemble):
    p = io.write_summary(ensemble, tmp_path / "s.bin", (4, 8))
    raw = p.read_bytes()
    assert raw[:4] == b"BSLB"
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + n])
    assert header["format"] == io.SUMMARY_BIN and header["shape"] == [5, 4, 8]
    assert len(raw) == 8 + n + 8 * 5 * 4 * 8
    h, data = io.read_summary(p)
    assert h == header
    for k, t in enumerate(ensemble.times):
        np.testing.assert_array_equal(data[k], marginal_histogram(ensemble, t, (4, 8)).reshape())
    np.testing.assert_allclose(data.sum(axis=(1, 2)), 1.0)


def test_summary_rejects_foreign_files(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(io.FormatError):
        io.read_summary(p)
    blob = json.dumps({"format": "other/v9"}).encode()
    p.write_bytes(b"BSLB" + struct.pack("<I", len(blob)) + blob)
    with pytest.raises(io.FormatError):
        io.read_summary(p)


@pytest.mark.parametrize("g", [circle(1.0), torus(1.0, 2.0), box(1.0, 1.0), triangle_quotient(1.0)],
                         ids=["circle", "torus", "box", "triangle"])
def test_geometry_dict_roundtrip(g):
    d = json.loads(json.dumps(io.geometry_dict(g)))
    assert io.geometry_from_dict(d) == g


def test_potential_csv(tmp_path):
    g = circle(2 * np.pi)
    f = fourier_forcing(g, 1.0, 1, regular_times=((0.0, 0.5), (0.5, 1.0)), shocks={0.5: 0.2})
    pg = solve_hopf_cole(g, f, 8, 4)
    p = io.write_potential_csv(pg, tmp_path / "psi.csv")
    header, data = io._read_csv(p, io.POTENTIAL_CSV)
    assert header == ["t", "x0", "psi", "psi_left"]
    assert data.shape == (5 * 8, 4)
    psi = data[:, 2].reshape(5, 8)
    left = data[:, 3].reshape(5, 8)
    np.testing.assert_array_equal(psi, pg.values)
    np.testing.assert_array_equal(left[2], pg.left[2])
    np.testing.assert_array_equal(left[1], psi[1])


def test_marginals_csv(tmp_path):
    g = circle(1.0)
    m, _ = solve_ipfp(incompressible_problem(g, 8, 2, lazy_coupling(g, 8)))
    p = io.write_marginals_csv(m, tmp_path / "m.csv")
    _, data = io._read_csv(p, io.MARGINAL_CSV)
    masses = data[:, -1].reshape(3, 8)
    np.testing.assert_array_equal(masses, np.stack(m.marginals()))


def test_rows_csv(tmp_path):
    p = io.write_rows_csv(tmp_path / "h.csv", "bslab.history.csv/v1", ["k", "r"],
                          [(0, np.float64(0.1)), (1, 1e-300)])
    header, data = io._read_csv(p, "bslab.history.csv/v1")
    assert header == ["k", "r"]
    np.testing.assert_array_equal(data, [[0, 0.1], [1, 1e-300]])


def test_to_jsonable():
    obj = {"a": np.float32(1.5), "b": np.array([1.0, np.inf, np.nan]), 3: (np.int64(2), np.bool_(True)),
           "c": float("-inf")}
    out = io.to_jsonable(obj)
    assert out == {"a": 1.5, "b": [1.0, None, None], "3": [2, True], "c": None}
    json.dumps(out, allow_nan=False)


def test_write_json_is_strict(tmp_path):
    p = io.write_json({"x": math.nan, "y": [np.float64(2.0)]}, tmp_path / "r.json")
    assert json.loads(p.read_text(), parse_constant=lambda c: pytest.fail(c)) == {"x": None, "y": [2.0]}
