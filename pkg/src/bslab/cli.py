"""Command-line entry point: ``bslab {simulate,solve,kinetics,hjb,verify}``.

Every run validates its JSON configuration against the packaged schema
before doing any work, then writes ``report.json`` and CSV artifacts to
``--out``. Exit codes: 0 all checks pass, 1 a check failed, 2 invalid
configuration, 3 infeasible problem.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from importlib import resources
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import jsonschema
import numpy as np
from referencing import Registry, Resource
from scipy import stats

from . import io
from .entropy import candidate_entropy_bound, path_measure_entropy
from .geometry import (FlatGeometry, GeometryError, Kind, box, cell_kernel, circle, interval,
                       torus, triangle_quotient)
from .hjb import (ConfigurationError as HJBConfigError, bump_forcing, feynman_kac_estimate,
                  fourier_forcing, gradient_field, hjb_residual, impermeability, ns_residual,
                  shock_jumps, solve_hopf_cole, zero_forcing)
from .kinetics import (continuity_residual, current_velocity, estimate_backward_velocity,
                       estimate_forward_velocity, estimate_local_time, exact_velocities,
                       linear_field, start_conditioned_kinetic_energy, uniform_histograms)
from .measures import Coupling, GridMeasure
from .sampling import (ConfigurationError, TimeGrid, build_candidate, build_gaussian_candidate,
                       endpoint_histogram, gaussian_coupling, lazy_coupling, marginal_histogram,
                       sample_reflected_bm, twisted_coupling)
from .solver import (DiscreteBSProblem, InfeasibleError, marginal_measures, sample_paths,
                     solve_ipfp)
from .verification import TIERS, _coarsen, _ok, _stat_tol, child_seed, run_all

REPORT_FORMAT = "bslab.report/v1"
COMMANDS = ("simulate", "solve", "kinetics", "hjb", "verify")
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3

logger = logging.getLogger("bslab")


class ConfigError(ValueError):
    """Configuration rejected before or while building the run."""


# ---------------------------------------------------------------------------
# configuration


def _schema_text(name: str) -> dict:
    return json.loads(resources.files("bslab").joinpath("schemas", f"{name}.json").read_text())


def _validator(command: str) -> jsonschema.Draft202012Validator:
    registry = Registry().with_resource("bslab/common",
                                        Resource.from_contents(_schema_text("common")))
    return jsonschema.Draft202012Validator(_schema_text(command), registry=registry)


def validate_config(command: str, cfg) -> None:
    errors = sorted(_validator(command).iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        msgs = [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration: " + "; ".join(msgs))


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc


_DEFAULT_LENGTHS = {"circle": [1.0], "interval": [1.0], "torus": [1.0, 1.0], "box": [1.0, 1.0]}
_FACTORY = {"circle": circle, "interval": interval, "torus": torus, "box": box}


def make_geometry(spec: dict):
    kind = spec["kind"]
    if kind == "gaussian":
        from .geometry import euclidean
        return euclidean(int(spec.get("dim", 1)))
    if kind == "triangle":
        return triangle_quotient(float(spec.get("side", 1.0)))
    lengths = spec.get("lengths", _DEFAULT_LENGTHS[kind])
    if kind in ("circle", "interval") and len(lengths) != 1:
        raise ConfigError(f"{kind} takes exactly one length")
    if kind in ("torus", "box") and len(lengths) < 2:
        raise ConfigError(f"{kind} needs at least two lengths")
    return _FACTORY[kind](*lengths)


def _n_cells(g: FlatGeometry, cells) -> int:
    return int(np.prod(np.broadcast_to(np.asarray(cells), (g.dim,))))


def make_coupling(spec: dict, g: FlatGeometry, cells, kernels=None) -> Coupling:
    kind = spec["type"]
    if kind == "gaussian":
        raise ConfigError("gaussian couplings need the gaussian geometry")
    if kind == "lazy":
        return lazy_coupling(g, cells, spec.get("eps", 0.1), spec.get("blur", 1e-3))
    if kind == "twisted":
        if g.kind is not Kind.CIRCLE:
            raise ConfigError("twisted couplings are defined on the circle")
        return twisted_coupling(g, int(np.atleast_1d(cells)[0]), spec.get("amplitude", 0.6),
                                spec.get("spread", 0.3))
    if kind == "independent":
        return Coupling.independent(GridMeasure.uniform(g, cells))
    if kind == "diagonal":
        return Coupling.diagonal(g, cells)
    N = _n_cells(g, cells)
    if kind == "reference":
        if kernels is None:
            K = cell_kernel(g, cells, 1.0)
        else:
            K = np.linalg.multi_dot(kernels) if len(kernels) > 1 else kernels[0]
        return Coupling(K / N, cells, g, label="reference")
    P = np.asarray(spec.get("values", []), float)
    if P.shape != (N, N):
        raise ConfigError(f"coupling matrix must be {N} x {N}")
    if not P.sum() > 0:
        raise ConfigError("coupling matrix has no mass")
    return Coupling(P / P.sum(), cells, g, label="matrix")


# ---------------------------------------------------------------------------
# checks


def _check(name: str, **gates) -> dict:
    measured = {k: v[0] for k, v in gates.items()}
    tolerance = {k: v[1] for k, v in gates.items()}
    passed = all(_ok(measured[k], tolerance[k]) for k in gates)
    return {"name": name, "passed": passed, "measured": measured, "tolerance": tolerance}


# ---------------------------------------------------------------------------
# simulate


def _expected_cell_masses(g, cells: int) -> np.ndarray:
    """Uniform-law cell masses on the histogram grid of the state space."""
    if isinstance(g, FlatGeometry):
        n = cells ** g.dim
        return np.full(n, 1.0 / n)
    i, j = np.divmod(np.arange(cells * cells), cells)
    w = np.where(j < i, 2.0, np.where(j == i, 1.0, 0.0))
    return w / w.sum()


def _fold_index(g, cells: int) -> np.ndarray | None:
    """Cell map induced by the fold onto the fundamental domain (triangle only)."""
    if isinstance(g, FlatGeometry):
        return None
    i, j = np.divmod(np.arange(cells * cells), cells)
    return np.maximum(i, j) * cells + np.minimum(i, j)


def run_simulate(cfg: dict, seed: int, tier: str, out: Path) -> dict:
    g = make_geometry(cfg["geometry"])
    n = int(cfg["n_paths"])
    steps = int(cfg.get("steps", 10))
    grid = TimeGrid.uniform(steps)
    interior = [float(t) for t in grid.times[1:-1]]
    checks, results, artifacts = [], {}, []
    coupling_spec = cfg["coupling"]
    if isinstance(g, FlatGeometry) and g.kind is Kind.GAUSSIAN:
        if coupling_spec["type"] != "gaussian":
            raise ConfigError("the gaussian geometry takes a gaussian coupling")
        pi = gaussian_coupling(g.dim, coupling_spec.get("rho", 0.0))
        e = build_gaussian_candidate(g.dim, pi, n, grid, seed=child_seed(seed, 1))
        var = [float(e.at(t).var(axis=0).mean()) for t in interior]
        rel = [abs(v / 0.25 - 1) for v in var]
        checks.append(_check("gaussian_variance_identity",
                             relative_error=(max(rel), {"max": _stat_tol(0.01, n)})))
        results["variance"] = {"times": interior, "per_coordinate": var}
    else:
        state = g if isinstance(g, FlatGeometry) else g.quotient
        if not state.compact:
            raise ConfigError("simulate needs a compact geometry")
        if coupling_spec["type"] == "gaussian":
            raise ConfigError("gaussian couplings need the gaussian geometry")
        cc = int(cfg.get("coupling_cells", 16))
        pi = make_coupling(coupling_spec, state, cc)
        e = build_candidate(g, pi, n, grid, seed=child_seed(seed, 1))
        hc = int(cfg.get("histogram_cells", 16))
        expected = _expected_cell_masses(g, hc)
        live = expected > 0
        dof = int(live.sum()) - 1
        lo, hi = stats.chi2.ppf(0.0005, dof), stats.chi2.ppf(0.9995, dof)
        chis = []
        for t in interior:
            obs = marginal_histogram(e, t, hc).masses * n
            exp = expected * n
            chis.append(float(np.sum((obs[live] - exp[live]) ** 2 / exp[live])))
        inside = sum(lo <= c <= hi for c in chis)
        checks.append(_check("uniformity_chi2",
                             fraction_in_band=(inside / len(chis), {"min": 8 / 9})))
        results["chi2"] = {"times": interior, "statistic": chis, "band": [lo, hi], "dof": dof}
        block = int(cfg.get("endpoint_block", 4))
        if state.dim == 2 and cc % block == 0:
            H = endpoint_histogram(e, cc)
            P = pi.matrix
            fold = _fold_index(g, cc)
            if fold is not None:
                Pf = np.zeros_like(P)
                np.add.at(Pf, (fold[:, None], fold[None, :]), P)
                P = Pf
            tv = 0.5 * float(np.abs(_coarsen(H, cc, block) - _coarsen(P, cc, block)).sum())
        else:
            H = endpoint_histogram(e, cc)
            tv = 0.5 * float(np.abs(H - pi.matrix).sum())
        checks.append(_check("endpoint_tv", tv=(tv, {"max": _stat_tol(0.02, n)})))
        results["endpoint_tv"] = tv
        if cfg.get("export", {}).get("summary", True):
            artifacts.append(io.write_summary(e, out / "summary.bin", hc).name)
    csv_paths = int(cfg.get("export", {}).get("csv_paths", 200))
    if csv_paths:
        from .sampling import PathEnsemble
        sub = PathEnsemble(e.grid, e.positions[:csv_paths], e.geometry, e.weights[:csv_paths])
        artifacts.append(io.write_ensemble_csv(sub, out / "ensemble.csv").name)
    return {"checks": checks, "results": results, "artifacts": artifacts}


# ---------------------------------------------------------------------------
# solve


def _constraint_indices(spec, steps: int) -> list[int]:
    if spec is None or spec == "all":
        return list(range(steps + 1))
    if spec == "interior":
        return list(range(1, steps))
    if spec == "none":
        return []
    bad = [t for t in spec if t > steps]
    if bad:
        raise ConfigError(f"constraint indices {bad} exceed the number of steps")
    return sorted(set(int(t) for t in spec))


def _marginal(spec, N: int) -> np.ndarray:
    if spec is None or spec["type"] == "uniform":
        return np.full(N, 1.0 / N)
    v = np.asarray(spec.get("values", []), float)
    if v.shape != (N,) or not v.sum() > 0:
        raise ConfigError(f"marginal needs {N} nonnegative masses")
    return v / v.sum()


def build_problem(cfg: dict) -> DiscreteBSProblem:
    g = make_geometry(cfg["geometry"])
    cells = cfg["cells"]
    steps = int(cfg["steps"])
    grid = TimeGrid.uniform(steps)
    from .solver import discretize_reference
    kernels = discretize_reference(g, cells, grid)
    N = _n_cells(g, cells)
    mu = _marginal(cfg.get("marginal"), N)
    targets = {t: mu for t in _constraint_indices(cfg.get("constraint_times"), steps)}
    pi = None if "coupling" not in cfg else make_coupling(cfg["coupling"], g, cells, kernels)
    return DiscreteBSProblem(g, cells, grid, targets, pi, kernels)


def run_solve(cfg: dict, seed: int, tier: str, out: Path) -> dict:
    prob = build_problem(cfg)
    tol = float(cfg.get("tol", 1e-10))
    max_sweeps = int(cfg.get("max_sweeps", 500))
    sol, diag = solve_ipfp(prob, tol=tol, max_sweeps=max_sweeps)
    rep = path_measure_entropy(sol)
    res = prob.residual(sol)
    checks = [_check("converged", residual=(res, {"max": tol}),
                     sweeps=(diag.sweeps, {"max_incl": max_sweeps})),
              _check("entropy_nonnegative", entropy=(rep.total, {"min": 0.0}))]
    results = {"entropy": rep.to_dict(), "diagnostics": diag.to_dict(), "residual": res}
    uniform = all(np.allclose(mu, 1.0 / prob.N) for mu in prob.targets.values())
    if prob.coupling is not None and uniform and prob.grid.times.size % 2 == 1:
        pi = Coupling(prob.coupling, prob.cells, prob.geometry)
        bound = candidate_entropy_bound(pi, kernels=prob.kernels).total
        checks.append(_check("entropy_below_candidate",
                             entropy=(rep.total, {"max_incl": bound + 1e-12})))
        results["candidate_bound"] = bound
    pot = sol.potentials()
    io.write_json({"format": "bslab.solution/v1", "eta": pot["eta"], "theta": pot["theta"],
                   "times": prob.grid.times, "cells": list(prob.cells),
                   "geometry": prob.geometry.to_dict(), "diagnostics": diag.to_dict()},
                  out / "solution.json")
    io.write_marginals_csv(sol, out / "marginals.csv")
    rows = [(k, r, h, d) for k, (r, h, d) in
            enumerate(zip(diag.residuals, diag.entropies, diag.duals))]
    io.write_rows_csv(out / "history.csv", "bslab.history.csv/v1",
                      ["sweep", "residual", "entropy", "dual"], rows)
    return {"checks": checks, "results": results,
            "artifacts": ["solution.json", "marginals.csv", "history.csv"]}


# ---------------------------------------------------------------------------
# kinetics


def run_kinetics(cfg: dict, seed: int, tier: str, out: Path) -> dict:
    src = cfg["source"]
    g = make_geometry(src["geometry"])
    n = int(cfg.get("n_paths", 20000))
    checks, results, artifacts = [], {}, []
    if src["type"] == "ibs":
        sub = {"geometry": src["geometry"], "cells": src["cells"], "steps": src["steps"],
               "coupling": src["coupling"]}
        prob = build_problem(sub)
        sol, diag = solve_ipfp(prob, tol=float(src.get("tol", 1e-9)),
                               max_sweeps=int(src.get("max_sweeps", 500)), track_entropy=False)
        times = prob.grid.times
        f, b = exact_velocities(sol)
        cu = current_velocity(f, b)
        r = continuity_residual(marginal_measures(sol), times, cu)
        ctrl = continuity_residual(uniform_histograms(g, prob.cells, times.size), times,
                                   linear_field(g, prob.cells, times))
        worst, control = max(r["residual"]), min(ctrl["residual"])
        checks.append(_check("continuity_residual",
                             divergence_free_control=(worst, {"max": 1e-3}),
                             compressible_control=(worst, {"max": control / 10})))
        H = path_measure_entropy(sol)
        target = H.total - H.terms["initial"]
        cp = sample_paths(sol, n, seed=child_seed(seed, 10), as_cells=True)
        ke = start_conditioned_kinetic_energy(sol, cp)
        checks.append(_check("kinetic_energy_identity",
                             relative_error=(abs(ke / target - 1), {"max": 0.1})))
        results.update({"continuity": r, "compressible_control": control,
                        "kinetic_energy": ke, "conditional_entropy": target,
                        "solver_residual": prob.residual(sol), "sweeps": diag.sweeps})
        artifacts.append(io.write_field_csv(cu, out / "current_velocity.csv").name)
        return {"checks": checks, "results": results, "artifacts": artifacts}

    grid = TimeGrid.uniform(int(src["steps"]))
    e = sample_reflected_bm(g, "uniform", grid, seed=child_seed(seed, 20), n_paths=n)
    bins = cfg.get("bins", 8)
    band = float(cfg.get("band", 4.0))
    fwd = estimate_forward_velocity(e, bins)
    ok = np.isfinite(fwd.values)
    z = np.abs(fwd.values[ok]) / np.maximum(fwd.stderr[ok], 1e-300)
    checks.append(_check("zero_drift_band",
                         fraction_within_band=(float(np.mean(z <= band)), {"min": 0.99})))
    results["forward_velocity"] = {"max_abs": float(np.max(np.abs(fwd.values[ok]))),
                                   "max_z": float(z.max()), "cells_reported": int(ok.sum())}
    artifacts.append(io.write_field_csv(fwd, out / "forward_velocity.csv").name)
    if g.has_boundary:
        f0 = estimate_forward_velocity(e, bins, exclusion_radius=0.0)
        b0 = estimate_backward_velocity(e, bins, exclusion_radius=0.0)
        cu = current_velocity(f0, b0)
        normal = []
        shape = cu.values.shape
        for i in range(g.dim):
            for end in (0, -1):
                idx = [slice(None)] * len(shape)
                idx[1 + i] = end
                idx[-1] = i
                v = cu.values[tuple(idx)]
                s = cu.stderr[tuple(idx)]
                good = np.isfinite(v)
                normal.append(np.abs(v[good]) / np.maximum(s[good], 1e-300))
        zn = np.concatenate(normal)
        checks.append(_check("impermeability_band",
                             fraction_within_band=(float(np.mean(zn <= band)), {"min": 0.99})))
        eps = float(cfg.get("local_time_eps", 0.05))
        r1 = estimate_local_time(e, eps).mean_rate
        r2 = estimate_local_time(e, eps / 2).mean_rate
        extrap = 2 * r2 - r1
        area = sum(2 * g.volume / L for L in g.lengths)
        exact = area / (2 * g.volume)
        checks.append(_check("local_time_rate",
                             richardson_relative_error=(abs(extrap / exact - 1), {"max": 0.05}),
                             pair_relative_gap=(abs(r1 - r2) / exact, {"max": 2 * eps * g.dim})))
        results["local_time"] = {"eps": [eps, eps / 2], "rates": [r1, r2],
                                 "richardson": extrap, "analytic": exact}
        artifacts.append(io.write_field_csv(cu, out / "current_velocity.csv").name)
    return {"checks": checks, "results": results, "artifacts": artifacts}


# ---------------------------------------------------------------------------
# hjb


def make_forcing(spec: dict, g: FlatGeometry):
    preset = spec["preset"]
    regular = tuple(tuple(r) for r in spec.get("regular_times", [[0.0, 1.0]]))
    if preset == "zero":
        return zero_forcing()
    if preset == "bump":
        return bump_forcing(g, spec.get("amplitude", 1.0), spec.get("center"),
                            spec.get("width", 0.1), regular)
    shocks = {float(s["time"]): float(s["amplitude"]) for s in spec.get("shocks", [])}
    return fourier_forcing(g, spec.get("amplitude", 1.0), spec.get("mode", 1),
                           spec.get("eta_amplitude", 0.0), regular, shocks)


def run_hjb(cfg: dict, seed: int, tier: str, out: Path) -> dict:
    g = make_geometry(cfg["geometry"])
    if g.dim > 2:
        raise ConfigError("the potential solver supports one or two dimensions")
    f = make_forcing(cfg["forcing"], g)
    levels = sorted(cfg.get("levels", list(TIERS[tier]["hjb_levels"])))
    for s in f.shocks:
        for n in levels:
            if abs(s * n - round(s * n)) > 1e-9:
                raise ConfigError(f"shock time {s} is not a grid time at resolution {n}")
    rows, hjb, ns, imp, jumps = [], [], [], 0.0, []
    shocks = sorted(f.shocks)
    pg = None
    for n in levels:
        pg = solve_hopf_cole(g, f, n, n)
        r = float(hjb_residual(pg).max())
        V = gradient_field(pg)
        nsr = float(np.nanmax(ns_residual(V, f, -1, pg.grid, skip_times=shocks)))
        hjb.append(r)
        ns.append(nsr)
        imp = max(imp, impermeability(V, pg.grid))
        if shocks:
            jumps.append(shock_jumps(pg))
        rows.append((n, r, nsr, float(hjb_residual(pg, form="display").max())))
    io.write_rows_csv(out / "refinement.csv", "bslab.refinement.csv/v1",
                      ["n", "hjb_residual", "ns_forward_residual", "display_form_residual"], rows)
    io.write_potential_csv(pg, out / "potential.csv")
    io.write_field_csv(gradient_field(pg), out / "velocity.csv")
    checks = []
    results = {"levels": levels, "hjb": hjb, "ns_forward": ns}
    if max(hjb) < 1e-12 and max(ns) < 1e-12:
        checks.append(_check("trivial_residuals", hjb=(max(hjb), {"max": 1e-12}),
                             ns=(max(ns), {"max": 1e-12})))
    else:
        factors = [hjb[i] / hjb[i + 1] for i in range(len(hjb) - 1)]
        checks.append(_check("hjb_second_order", reduction_factors=(factors, {"range": [3.0, 5.0]})))
        checks.append(_check("ns_forward_decreasing",
                             monotone=(bool(np.all(np.diff(ns) < 0)), {"equals": True})))
        results["hjb_factors"] = factors
    if g.has_boundary:
        checks.append(_check("impermeability", max_normal=(imp, {"max_incl": 0.0})))
    if shocks:
        psi_err = max(j[s]["psi_jump_error"] for j in jumps for s in j)
        grads = [max(j[s]["grad_jump_error"] for s in j) for j in jumps]
        factors = [grads[i] / grads[i + 1] for i in range(len(grads) - 1)]
        checks.append(_check("shock_jumps", psi_error=(psi_err, {"max": 1e-12}),
                             grad_order_factors=(factors, {"range": [3.0, 5.0]})))
        results["shock_jumps"] = {"psi_error": psi_err, "grad_error": grads}
    fk = cfg.get("feynman_kac", {})
    probes = int(fk.get("probes", 0))
    if probes:
        n = int(fk.get("resolution", 64))
        pg = solve_hopf_cole(g, f, n, n)
        rng = np.random.default_rng(child_seed(seed, 7))
        agree, table = 0, []
        for i in range(probes):
            k = int(rng.integers(0, n))
            idx = tuple(int(rng.integers(0, m)) for m in pg.grid.shape)
            z = np.array([pg.grid.axes[a][idx[a]] for a in range(len(idx))])
            est = feynman_kac_estimate(g, f, float(pg.times[k]), z, int(fk.get("samples", 5000)),
                                       seed=child_seed(seed, 700 + i),
                                       n_steps=int(fk.get("n_steps", 128)))
            pde = float(np.exp(pg.values[k][idx]))
            agree += abs(est.mean - pde) <= 3 * est.half_width
            table.append({"t": float(pg.times[k]), "z": z.tolist(), "mc": est.mean,
                          "half_width": est.half_width, "pde": pde})
        checks.append(_check("feynman_kac", agreement=(agree / probes, {"min": 0.9})))
        results["feynman_kac"] = table
    return {"checks": checks, "results": results,
            "artifacts": ["refinement.csv", "potential.csv", "velocity.csv"]}


# ---------------------------------------------------------------------------
# verify


def run_verify(cfg: dict, seed: int, tier: str, out: Path) -> dict:
    tier = cfg.get("tier", tier)
    results = run_all(tier, seed, cfg.get("criteria"))
    checks, timings = [], {}
    for r in results:
        checks.append(r.to_dict(timings=False))
        timings[f"criterion_{r.criterion}"] = r.seconds
        print(r.line())
    return {"checks": checks, "results": {"tier": tier}, "artifacts": [],
            "timings": timings}


RUNNERS = {"simulate": run_simulate, "solve": run_solve, "kinetics": run_kinetics,
           "hjb": run_hjb, "verify": run_verify}


# ---------------------------------------------------------------------------
# driver


def _package_version() -> str:
    try:
        return version("bslab")
    except PackageNotFoundError:
        return "unknown"


def execute(command: str, cfg: dict, seed: int | None = None, tier: str = "standard",
            out: Path | str = "bslab-out") -> tuple[int, dict]:
    """Validate, run and write ``report.json``; returns ``(exit_code, report)``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    report = {"format": REPORT_FORMAT, "command": command, "version": _package_version(),
              "config": cfg, "tier": tier, "checks": [], "results": {}, "artifacts": [],
              "error": None}
    t0 = time.perf_counter()
    try:
        validate_config(command, cfg)
        seed = int(cfg.get("seed", 0)) if seed is None else int(seed)
        report["seed"] = seed
        payload = RUNNERS[command](cfg, seed, tier, out)
        report.update({k: payload[k] for k in ("checks", "results", "artifacts")})
        report["timings"] = dict(payload.get("timings", {}))
        code = EXIT_OK if all(c["passed"] for c in report["checks"]) else EXIT_CHECK
    except InfeasibleError as exc:
        report["error"] = f"infeasible: {exc}"
        code = EXIT_INFEASIBLE
    except (ConfigError, ConfigurationError, HJBConfigError, GeometryError, ValueError) as exc:
        report["error"] = str(exc)
        code = EXIT_CONFIG
    report.setdefault("seed", 0 if seed is None else int(seed))
    report.setdefault("timings", {})
    report["timings"]["total_seconds"] = time.perf_counter() - t0
    report["passed"] = code == EXIT_OK
    report["exit_code"] = code
    io.write_json(report, out / "report.json")
    return code, report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bslab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, required=name != "verify")
        s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        s.add_argument("--out", type=Path, default=Path("bslab-out"))
        s.add_argument("--tier", choices=tuple(TIERS), default="standard")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else {"command": args.command}
    except ConfigError as exc:
        print(f"bslab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, report = execute(args.command, cfg, args.seed, args.tier, args.out)
    if report["error"]:
        print(f"bslab: {report['error']}", file=sys.stderr)
    for c in report["checks"]:
        if args.command != "verify":
            print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}")
    print(f"report: {Path(args.out) / 'report.json'} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
