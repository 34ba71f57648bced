"""Command-line entry point.

Every subcommand reads the same JSON configuration, writes CSV/JSON
results plus figures into ``--out`` and finishes with ``manifest.json``.
Exit status: 0 when all checks pass, 1 when a check fails or a numerical
error is raised, 2 for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
import time
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np
from scipy import stats

from . import pdmp, plotting, steady, transport
from .config import build_operators, parse_config
from .errors import (CellCycleError, GridMismatch, NoConvergence, NotInvertible,
                     SchemaViolation)
from .grid import boundary_bump, gaussian_bump, read_state_csv, write_state_csv
from .interval import BoundaryMeasure, IntervalResolvent, interval_residuals
from .rng import CellStream

SUBCOMMANDS = ("simulate-pdmp", "evolve-pde", "steady-state", "resolvent-check",
               "interval-example")
INTERVAL_FUNCTIONS = {
    "sin_pi": lambda x: np.sin(np.pi * x),
    "one": lambda x: np.ones_like(x),
    "x": lambda x: np.asarray(x, dtype=float),
}


# -- output helpers -----------------------------------------------------------

def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return _plain(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([("%.17g" % v) if isinstance(v, (float, np.floating)) else v
                        for v in row])
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "matplotlib", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _initial_density(ops, cfg):
    init = cfg["run"]["initial"]
    if init.get("csv"):
        return read_state_csv(init["csv"], ops.grid)
    phase = 1 if init["phase"] == "A" else 2
    return gaussian_bump(ops.grid, init["a0"], init["s0"], init["sigma"], phase=phase)


# -- subcommands ----------------------------------------------------------------

def run_resolvent_check(cfg, ops, out: Path, args) -> tuple[bool, list, dict]:
    limit = cfg["run"]["residual_limit"]
    f = _initial_density(ops, cfg)
    nf = f.l1_norm()
    rows = []
    per_lambda = []
    for lam in cfg["run"]["lambdas"]:
        lam = float(lam)
        entry = {"lambda": lam, "norm_bound": ops.norm_bound(lam)}
        if lam <= ops.omega:
            entry.update(skipped="lambda <= omega", passed=True)
            per_lambda.append(entry)
            continue
        entry["grid_norm"] = ops.grid_norm(lam)
        u = ops.resolvent_a_psi(f, lam)
        beta = ops.apply_psi(u)
        entry["residual"] = ops.generator_residual(u, lam, f, beta) / nf
        entry["coupling"] = (ops.apply_psi0(u) - beta).l1_norm() / nf
        entry["lambda_norm_ratio"] = lam * u.l1_norm() / nf
        entry["passed"] = bool(entry["grid_norm"] <= entry["norm_bound"] + 1e-6
                               and entry["residual"] <= limit and entry["coupling"] <= limit)
        per_lambda.append(entry)
        rows.append((lam, entry["grid_norm"], entry["norm_bound"], entry["residual"],
                     entry["coupling"], entry["lambda_norm_ratio"]))
    checked = [float(x) for x in cfg["run"]["lambdas"] if x > ops.omega]
    hyp = ops.check_hypotheses(checked) if checked else {"checks": [], "pass": True}
    ok = all(e["passed"] for e in per_lambda) and hyp["pass"]
    files = [write_csv(out / "resolvent_check.csv",
                       ["lambda", "grid_norm", "norm_bound", "residual", "coupling",
                        "lambda_norm_ratio"], rows)]
    report = {"grid": ops.grid.describe(), "variant": ops.variant, "omega": ops.omega,
              "residual_limit": limit, "lambdas": per_lambda, "hypotheses": hyp,
              "passed": ok}
    files.append(write_json(out / "resolvent_check.json", report))
    if len(rows) >= 2:
        files += plotting.line_plot(out / "resolvent_check.csv", "lambda",
                                    ["grid_norm", "norm_bound"], out / "resolvent_norms.png",
                                    "Boundary operator norm and bound")
    return ok, files, {"passed": ok}


def _marginal_rows(state):
    g = state.grid
    m1, m2 = state.size_marginals()
    x = np.asarray(g.growth.q_inverse(g.s_nodes))
    return [(s, xx, a, b) for s, xx, a, b in zip(g.s_nodes, x, m1, m2)]


def run_evolve_pde(cfg, ops, out: Path, args):
    f = _initial_density(ops, cfg)
    t_end = cfg["run"]["t_end"]
    snaps = sorted(set(cfg["run"]["snapshot_times"]) | {t_end})
    res = transport.evolve(ops, f, t_end, snaps)
    m0 = f.l1_norm()
    total = res.mass + res.truncation
    files = [write_csv(out / "mass.csv", ["t", "mass", "truncation", "total"],
                       zip(res.times, res.mass, res.truncation, total)),
             write_csv(out / "ledger.csv", ["side", "mass"],
                       [("s_max", res.ledger.s_max), ("s_min", res.ledger.s_min)])]
    for t, state in sorted(res.snapshots.items()):
        name = "snapshot_t%s" % ("%g" % t).replace(".", "p")
        files.append(write_csv(out / (name + "_marginals.csv"),
                               ["s", "x", "phase_a", "phase_b"], _marginal_rows(state)))
        if cfg["run"]["full_snapshots"]:
            write_state_csv(state, out / (name + ".csv"))
            files.append(out / (name + ".csv"))
    summary = {"t_end": t_end, "steps": len(res.times) - 1, "initial_mass": m0,
               "final_mass": float(res.mass[-1]), "ledger": res.ledger.as_dict(),
               "variant": ops.variant}
    if ops.variant == "single_line":
        err = float(np.max(np.abs(total - m0)))
        summary["max_conservation_error"] = err
        ok = err <= 1e-10 * max(1.0, m0)
    else:
        half = len(res.times) // 2
        if len(res.times) - half >= 2:
            summary["growth_rate"] = float(np.polyfit(res.times[half:],
                                                      np.log(res.mass[half:]), 1)[0])
        summary["growth_rate_oracle"] = transport.bell_rate_oracle(ops)
        ok = True
    summary["passed"] = ok
    files.append(write_json(out / "evolve.json", summary))
    files += plotting.line_plot(out / "mass.csv", "t", ["mass", "total"], out / "mass.png",
                                "Mass and mass plus truncation")
    last = out / ("snapshot_t%s_marginals.csv" % ("%g" % t_end).replace(".", "p"))
    files += plotting.line_plot(last, "s", ["phase_a", "phase_b"], out / "final_marginals.png",
                                "Size marginals at t = %g" % t_end, xlabel="s = Q(x)")
    return ok, files, summary


def run_steady_state(cfg, ops, out: Path, args):
    g = ops.grid
    run = cfg["run"]
    files = []
    try:
        init = run["initial"]
        f0 = boundary_bump(g, init["s0"], init["sigma"])
        fp = steady.find_fixed_point(ops, f0, tol=run["tol"], max_iter=run["max_iter"])
    except NoConvergence as exc:
        diag = exc.diagnostic
        files.append(write_csv(out / "residuals.csv",
                               ["iteration", "residual"], enumerate(diag["residuals"])))
        files.append(write_csv(out / "moments.csv", ["iteration", "label_mean", "label_variance"],
                               zip(range(len(diag["mean"])), diag["mean"], diag["variance"])))
        verdict = diag["classification"]
        summary = {"converged": False, "verdict": verdict, "diagnostic": diag,
                   "existence": steady.existence_report(ops), "message": str(exc)}
        ok = verdict == "dispersive"
        summary["passed"] = ok
        files.append(write_json(out / "steady_state.json", summary))
        files += plotting.line_plot(out / "moments.csv", "iteration", ["label_variance"],
                                    out / "moments.png", "Variance of Q(x) across iterates")
        return ok, files, summary

    labels = g.labels
    files.append(write_csv(out / "birth_density.csv", ["s", "x", "density"],
                           zip(labels, np.asarray(g.growth.q_inverse(labels)), fp.density)))
    files.append(write_csv(out / "residuals.csv", ["iteration", "residual", "label_mean",
                                                    "label_variance"],
                           [(k, r, m[0], m[1]) for k, (r, m) in
                            enumerate(zip(fp.history, fp.moments))]))
    f_star = steady.build_steady_density(ops, fp.density, normalize=True)
    checks = steady.verify_steady(ops, f_star)
    invariance = None
    if g.nb > 0 and ops.variant == "single_line":
        s1 = transport.evolve(ops, f_star, transport.n_steps(ops, 1.0) * g.h).state
        invariance = (s1 - f_star).l1_norm()
    existence = steady.existence_report(ops)
    files.append(write_json(out / "existence.json", existence))
    files.append(write_csv(out / "steady_marginals.csv", ["s", "x", "phase_a", "phase_b"],
                           _marginal_rows(f_star)))
    ok = invariance is None or invariance <= 5e-3
    summary = {"converged": True, "verdict": "converged", "residual": fp.residual,
               "iterations": fp.iterations, "checks": checks,
               "semigroup_invariance_t1": invariance, "existence_verdict": existence["verdict"],
               "passed": ok}
    files.append(write_json(out / "steady_state.json", summary))
    files += plotting.line_plot(out / "birth_density.csv", "s", ["density"],
                                out / "birth_density.png", "Fixed point of P",
                                xlabel="s = Q(x)")
    files += plotting.line_plot(out / "residuals.csv", "iteration", ["residual"],
                                out / "residuals.png", "Power iteration residual", logy=True)
    return ok, files, summary


def run_simulate_pdmp(cfg, ops, out: Path, args):
    g = ops.grid
    run = cfg["run"]
    seed = args.seed
    n, t_end = run["n_cells"], run["t_end"]
    f = _initial_density(ops, cfg)
    ens = pdmp.ensemble_density(ops, f, n, t_end, seed, threads=args.threads)
    rows = []
    for phase, counts, dens in (("A", ens.counts_a, ens.density.f1),
                                ("B", ens.counts_b, ens.density.f2)):
        ii, jj = np.nonzero(counts)
        x = np.asarray(g.growth.q_inverse(g.s_nodes[jj])) if len(jj) else []
        for i, j, xx in zip(ii, jj, x):
            rows.append((phase, g.ages[i], g.s_nodes[j], xx, int(counts[i, j]), dens[i, j]))
    files = [write_csv(out / "histogram.csv", ["phase", "a", "s", "x", "count", "density"], rows)]

    events = []
    init = pdmp.sample_initial(ops, f, np.arange(run["event_cells"], dtype=np.uint64), seed)
    for k in range(run["event_cells"]):
        size = float(g.growth.size_of(init.s[k]))
        if not size > 0:
            continue
        state = pdmp.CellState(float(init.age[k]), size, "A" if init.phase[k] == 0 else "B",
                               0.0, float(init.remaining[k]) if init.phase[k] == 0 else None)
        _, evs = pdmp.simulate_lineage(ops, state, t_end, CellStream(seed, k, tag=1))
        events += [(k, e.time, e.kind, e.size_at_event, e.generation) for e in evs]
    files.append(write_csv(out / "events.csv", ["cell", "time", "kind", "size", "generation"],
                           events))

    gt = pdmp.sample_generation_times(ops, n, seed)
    ks = stats.kstest(gt, lambda x: ops.duration.generation_time_cdf(ops.T_B, x))
    ks_limit = 1.63 / math.sqrt(n)
    summary = {"n_cells": n, "t_end": t_end, "seed": seed, "outside_window": ens.outside,
               "mass_in_window": float(ens.density.l1_norm()),
               "generation_time": {"mean": float(gt.mean()), "min": float(gt.min()),
                                   "ks_statistic": float(ks.statistic), "ks_limit": ks_limit,
                                   "below_T_B": int((gt < ops.T_B).sum())}}
    ok = ks.statistic <= ks_limit and summary["generation_time"]["below_T_B"] == 0
    if g.nb > 0:
        try:
            pde = transport.evolve(ops, f, t_end).state
        except GridMismatch:
            pde = None
        if pde is not None:
            # informational: raw cells are noise-dominated, 64x64 blocks are not
            summary["pde_distance"] = {"l1_cells": pdmp.block_l1(ens.density, pde, 1),
                                       "l1_blocks_64": pdmp.block_l1(ens.density, pde, 64)}
    if ops.variant == "bell_population":
        br = pdmp.simulate_branching(ops, min(n, run["branching_cap"]), t_end,
                                     run["branching_cap"], seed)
        summary["branching"] = {"rate": br.rate, "oracle": transport.bell_rate_oracle(ops),
                                "thinning_events": br.thinning_events}
        files.append(write_csv(out / "branching.csv", ["t", "log_population", "count"],
                               zip(br.times, br.log_population, br.counts)))
    summary["passed"] = ok
    files.append(write_json(out / "pdmp_summary.json", summary))
    edges = np.linspace(ops.T_B, float(np.quantile(gt, 0.995)), 61)
    hist, _ = np.histogram(gt, bins=edges, density=True)
    mid = 0.5 * (edges[1:] + edges[:-1])
    files.append(write_csv(out / "generation_times.csv", ["t", "empirical", "density"],
                           zip(mid, hist, ops.duration.generation_time_density(ops.T_B, mid))))
    files += plotting.line_plot(out / "generation_times.csv", "t", ["empirical", "density"],
                                out / "generation_times.png", "Generation time density")
    return ok, files, summary


def run_interval_example(cfg, ops, out: Path, args):
    section = cfg["run"]["interval"]
    mu = BoundaryMeasure.from_config(section["measure"])
    f = INTERVAL_FUNCTIONS[section["f"]]
    n = section["n_points"]
    x = np.linspace(0.0, 1.0, n)
    results = []
    columns = {"x": x}
    ok = True
    for lam in section["lambdas"]:
        lam = float(lam)
        entry = {"lambda": lam}
        try:
            r = interval_residuals(f, lam, mu, n)
        except NotInvertible as exc:
            entry.update(not_invertible=True, message=str(exc))
            results.append(entry)
            continue
        entry.update(not_invertible=False, psi_psi=r["psi_psi"],
                     equation_residual=r["equation"], boundary_residual=r["boundary"])
        entry["passed"] = bool(r["equation"] < 1e-8 and r["boundary"] < 1e-8)
        ok = ok and entry["passed"]
        columns["u_lambda_%g" % lam] = IntervalResolvent(f, lam, mu).on_grid(x)
        results.append(entry)
    files = [write_json(out / "interval.json", {"measure": section["measure"], "f": section["f"],
                                                "n_points": n, "results": results,
                                                "passed": ok})]
    names = list(columns)
    files.append(write_csv(out / "interval_u.csv", names, zip(*columns.values())))
    if len(names) > 1:
        files += plotting.line_plot(out / "interval_u.csv", "x", names[1:],
                                    out / "interval_u.png", "Resolvent on [0, 1]")
    return ok, files, {"passed": ok}


RUNNERS = {
    "simulate-pdmp": run_simulate_pdmp,
    "evolve-pde": run_evolve_pde,
    "steady-state": run_steady_state,
    "resolvent-check": run_resolvent_check,
    "interval-example": run_interval_example,
}


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="JSON configuration file")
    common.add_argument("--seed", type=int, default=None,
                        help="unsigned 64-bit seed (overrides run.seed)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker budget")
    common.add_argument("--grid-h", type=float, default=None,
                        help="override grid.h (snapped so T_B/h is an integer)")
    parser = argparse.ArgumentParser(prog="cellcycle",
                                     description="Two-phase cell-cycle model toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.config.is_file():
        print("error: config file %s not found" % args.config, file=sys.stderr)
        return 2
    if args.threads < 1 or (args.grid_h is not None and not args.grid_h > 0):
        print("error: --threads must be >= 1 and --grid-h positive", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(args.config)
    except SchemaViolation as exc:
        print(str(exc), file=sys.stderr)
        return 2
    if args.grid_h is not None:
        cfg["grid"]["h"] = args.grid_h
    if args.seed is None:
        args.seed = cfg["run"]["seed"]
    elif not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    cfg["run"]["seed"] = args.seed
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        ops = build_operators(cfg)
        ok, files, summary = RUNNERS[args.command](cfg, ops, out, args)
        status = 0 if ok else 1
    except (CellCycleError, ArithmeticError, ValueError) as exc:
        print("error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        files, summary, status = [], {"error": "%s: %s" % (type(exc).__name__, exc)}, 1
    manifest = {
        "command": args.command,
        "config": cfg,
        "seed": args.seed,
        "threads": args.threads,
        "versions": _versions(),
        "started_utc": started.isoformat(),
        "wall_time_s": time.perf_counter() - t0,
        "exit_status": status,
        "summary": summary,
        "files": {Path(p).name: _sha256(Path(p)) for p in files},
    }
    write_json(out / "manifest.json", manifest)
    print("%s: %s (%s)" % (args.command, "pass" if status == 0 else "FAIL", out))
    return status


if __name__ == "__main__":
    sys.exit(main())
