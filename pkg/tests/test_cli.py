import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from bslab import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
REPORT_SCHEMA = cli._schema_text("report")

EXPECTED = {
    "hjb_shock": 0, "hjb_zero": 0, "invalid_geometry": 2, "kinetics_box": 0, "kinetics_ibs": 0,
    "kinetics_torus": 0, "simulate_gaussian": 0, "simulate_torus": 0, "simulate_triangle": 0,
    "solve_circle": 0, "solve_infeasible": 3, "solve_reference": 0, "verify_fast": 0,
}


def _load(name):
    return json.loads((CONFIGS / f"{name}.json").read_text())


def _run(name, tmp_path, cfg=None, **kw):
    cfg = _load(name) if cfg is None else cfg
    return cli.execute(cfg["command"], cfg, out=tmp_path, tier=kw.pop("tier", "fast"), **kw)


def _strip_timings(report):
    r = dict(report)
    r.pop("timings", None)
    return r


def test_every_shipped_config_is_covered():
    assert {p.stem for p in CONFIGS.glob("*.json")} - set(EXPECTED) == {
        "hjb_smooth", "verify_standard", "verify_thorough"}


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_shipped_configs(name, tmp_path):
    code, report = _run(name, tmp_path)
    assert code == EXPECTED[name], report["error"]
    on_disk = json.loads((tmp_path / "report.json").read_text())
    jsonschema.Draft202012Validator(REPORT_SCHEMA).validate(on_disk)
    assert on_disk["format"] == cli.REPORT_FORMAT
    assert on_disk["exit_code"] == code and on_disk["passed"] == (code == 0)
    for a in on_disk["artifacts"]:
        assert (tmp_path / a).is_file()
    if code == 0:
        assert on_disk["checks"] and all(c["passed"] for c in on_disk["checks"])


@pytest.mark.slow
def test_hjb_smooth_config(tmp_path):
    code, report = _run("hjb_smooth", tmp_path)
    assert code == 0, [c for c in report["checks"] if not c["passed"]]


def test_failed_check_exits_one(tmp_path):
    # a nonuniform interior marginal needs more than one sweep
    masses = list(np.random.default_rng(0).uniform(0.5, 2.0, 64))
    cfg = dict(_load("solve_circle"), max_sweeps=1, constraint_times=[4],
               marginal={"type": "masses", "values": masses})
    code, report = _run("solve_circle", tmp_path, cfg)
    assert code == 1
    assert not next(c for c in report["checks"] if c["name"] == "converged")["passed"]


def test_unknown_key_is_rejected(tmp_path):
    cfg = dict(_load("solve_circle"), colour="blue")
    code, report = _run("solve_circle", tmp_path, cfg)
    assert code == 2 and "colour" in report["error"]


def test_wrong_command_schema(tmp_path):
    code, _ = cli.execute("hjb", _load("solve_circle"), out=tmp_path)
    assert code == 2


def test_infeasible_reports_reason(tmp_path):
    code, report = _run("solve_infeasible", tmp_path)
    assert code == 3 and report["error"].startswith("infeasible")


def test_reports_are_deterministic(tmp_path):
    a = _run("simulate_torus", tmp_path / "a")[1]
    b = _run("simulate_torus", tmp_path / "b")[1]
    assert _strip_timings(a) == _strip_timings(b)
    for art in a["artifacts"]:
        assert (tmp_path / "a" / art).read_bytes() == (tmp_path / "b" / art).read_bytes()


def test_seed_override_changes_results(tmp_path):
    a = _run("simulate_torus", tmp_path / "a")[1]
    b = _run("simulate_torus", tmp_path / "b", seed=99)[1]
    assert b["seed"] == 99
    assert a["results"] != b["results"]


def test_console_entry_point(tmp_path):
    out = tmp_path / "o"
    proc = subprocess.run([sys.executable, "-m", "bslab.cli", "solve", "--config",
                           str(CONFIGS / "solve_reference.json"), "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "[PASS]" in proc.stdout and "exit 0" in proc.stdout
    assert (out / "report.json").is_file()


def test_console_bad_config_path(tmp_path):
    assert cli.main(["solve", "--config", str(tmp_path / "missing.json"),
                     "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["solve", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_console_invalid_geometry_message(tmp_path, capsys):
    code = cli.main(["simulate", "--config", str(CONFIGS / "invalid_geometry.json"),
                     "--out", str(tmp_path)])
    assert code == 2
    assert "lenghts" in capsys.readouterr().err
