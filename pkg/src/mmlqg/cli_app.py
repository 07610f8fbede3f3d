"""Command-line batch interface.

Subcommands: solve-lqg, solve-mfg, simulate, nash-gap, verify.  Every
command is a pure function of (config bytes, master seed): numeric
output files are byte-stable across reruns and across --threads, and
the wall-clock manifest lives in its own file so the data files can be
diffed directly.

Exit codes: 0 success, 2 config error, 3 numerical failure,
4 assumption violation.
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, config, verify
from .errors import AssumptionViolationError, NumericalError, SchemaError
from .lqg_single import expected_cost, solve_finite_horizon, validate_convexity
from .mfg_model import validate_problem
from .mfg_solver import solve_consistency_finite
from .nash_gap import gap_vs_population
from .population_sim import (
    PopulationConfig,
    mean_field_convergence_study,
    simulate_population,
)


def _fmt(v: float) -> str:
    return "%.17g" % float(v)


def _write_csv(path: Path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            cell if isinstance(cell, str) else
            (str(cell) if isinstance(cell, (int, np.integer)) else _fmt(cell))
            for cell in row))
    path.write_text("\n".join(lines) + "\n")


def _write_grid_csv(path: Path, values: np.ndarray):
    """Long format (node, row, col, value) of a (nodes, r, c) table."""
    rows = []
    nodes, r, c = values.shape
    for j in range(nodes):
        for a in range(r):
            for b in range(c):
                rows.append((j, a, b, values[j, a, b]))
    _write_csv(path, ("node", "row", "col", "value"), rows)


def _write_summary(out: Path, payload: dict):
    (out / "summary.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_manifest(out: Path, command: str, cfg_path: str, cfg: dict,
                    seed, timings: dict):
    payload = {
        "command": command,
        "config_path": cfg_path,
        "config_sha256": config.canonical_hash(cfg),
        "master_seed": seed,
        "artifact_version": __version__,
        "out_dir": str(out),
        "timings": timings,
    }
    (out / "manifest.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _parallel_map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _report_dict(report) -> dict:
    return {
        "passed": report.ok,
        "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail}
                   for c in report.checks],
    }


def cmd_solve_lqg(cfg: dict, cfg_path: str, out: Path, seed, threads: int) -> int:
    started = time.monotonic()
    p = config.parse_lqg_problem(cfg)
    report = validate_convexity(p)
    if not report.ok:
        raise AssumptionViolationError(
            "convexity validation failed: %s" % report.summary(), report=report)
    sol = solve_finite_horizon(p)
    J = expected_cost(p, sol)
    _write_grid_csv(out / "pi.csv", sol.Pi.values)
    _write_grid_csv(out / "s.csv", sol.s.values)
    _write_grid_csv(out / "gains.csv", sol.K.values)
    _write_grid_csv(out / "feedforward.csv", sol.kff.values)
    _write_summary(out, {
        "J_star": J,
        "Pi0": sol.Pi.values[0].tolist(),
        "s0": sol.s.values[0].tolist(),
        "validation": _report_dict(report),
        "grid": {"T": p.grid.t_end, "M": p.grid.num_steps},
    })
    _write_manifest(out, "solve-lqg", cfg_path, cfg, seed,
                    {"wall_s": time.monotonic() - started})
    return 0


def cmd_solve_mfg(cfg: dict, cfg_path: str, out: Path, seed, threads: int) -> int:
    started = time.monotonic()
    p = config.parse_mfg_problem(cfg)
    report = validate_problem(p)
    if not report.ok:
        raise AssumptionViolationError(
            "assumption validation failed: %s" % report.summary(), report=report)
    sol = solve_consistency_finite(p, config.parse_fixed_point(cfg))
    _write_grid_csv(out / "pi_major.csv", sol.Pi0.values)
    _write_grid_csv(out / "s_major.csv", sol.s0.values)
    _write_grid_csv(out / "gains_major.csv", sol.major_law.K.values)
    _write_grid_csv(out / "mf_Abar.csv", sol.mf_law.Abar.values)
    _write_grid_csv(out / "mf_Gbar.csv", sol.mf_law.Gbar.values)
    _write_grid_csv(out / "mf_mbar.csv", sol.mf_law.mbar.values)
    for k in range(p.K):
        _write_grid_csv(out / ("pi_minor%d.csv" % k), sol.Pik[k].values)
        _write_grid_csv(out / ("s_minor%d.csv" % k), sol.sk[k].values)
        _write_grid_csv(out / ("gains_minor%d.csv" % k),
                        sol.minor_laws[k].K.values)
    _write_csv(out / "residuals.csv", ("iteration", "residual"),
               [(i, r) for i, r in enumerate(sol.report.residual_history)])
    term_gap = max(
        [float(np.abs(sol.Pi0.values[-1] - sol.ext_major.G0ext).max())]
        + [float(np.abs(sol.Pik[k].values[-1] - sol.ext_minors[k].Gkext).max())
           for k in range(p.K)])
    _write_summary(out, {
        "iterations": sol.report.iterations,
        "residual": sol.report.residual,
        "converged": sol.report.converged,
        "terminal_weight_gap": term_gap,
        "assumptions": _report_dict(report),
        "grid": {"T": p.grid.t_end, "M": p.grid.num_steps},
    })
    _write_manifest(out, "solve-mfg", cfg_path, cfg, seed,
                    {"wall_s": time.monotonic() - started})
    return 0


def cmd_simulate(cfg: dict, cfg_path: str, out: Path, seed, threads: int) -> int:
    started = time.monotonic()
    p = config.parse_mfg_problem(cfg)
    pop = config.parse_population(cfg)
    if "N" not in pop:
        raise SchemaError("$.population: missing key 'N'")
    if seed is not None:
        pop["master_seed"] = seed
    sol = solve_consistency_finite(p, config.parse_fixed_point(cfg))
    pcfg = PopulationConfig(N=pop["N"], num_paths=pop["num_paths"],
                            master_seed=pop["master_seed"], record_states=True)
    bundle = simulate_population(p, sol, pcfg)
    states = bundle.states
    rows = []
    for path in range(states.shape[0]):
        for j in range(states.shape[1]):
            for agent in range(states.shape[2]):
                for a in range(states.shape[3]):
                    rows.append((path, j, agent, a, states[path, j, agent, a]))
    _write_csv(out / "states.csv", ("path", "node", "agent", "row", "value"),
               rows)
    rows = []
    for path in range(bundle.xbar.shape[0]):
        for j in range(bundle.xbar.shape[1]):
            for a in range(bundle.xbar.shape[2]):
                rows.append((path, j, a, bundle.xbar[path, j, a]))
    _write_csv(out / "mean_field.csv", ("path", "node", "row", "value"), rows)
    rows = []
    for path in range(bundle.empirical_types.shape[0]):
        for j in range(bundle.empirical_types.shape[1]):
            for a in range(bundle.empirical_types.shape[2]):
                rows.append((path, j, a, bundle.empirical_types[path, j, a]))
    _write_csv(out / "empirical_mean.csv", ("path", "node", "row", "value"),
               rows)
    summary = {
        "N": pop["N"],
        "num_paths": pop["num_paths"],
        "master_seed": pop["master_seed"],
        "grid": {"T": p.grid.t_end, "M": p.grid.num_steps},
    }
    study = config.parse_study(cfg)
    if study is not None:
        result = mean_field_convergence_study(p, sol, study["Ns"],
                                              study["seeds"])
        _write_csv(out / "convergence.csv", ("N", "rms"), result.rows)
        summary["convergence_slope"] = result.slope
    _write_summary(out, summary)
    _write_manifest(out, "simulate", cfg_path, cfg, pop["master_seed"],
                    {"wall_s": time.monotonic() - started})
    return 0


def cmd_nash_gap(cfg: dict, cfg_path: str, out: Path, seed, threads: int) -> int:
    started = time.monotonic()
    p = config.parse_mfg_problem(cfg)
    nash = config.parse_nash(cfg)
    if seed is not None:
        nash["master_seed"] = seed
    sol = solve_consistency_finite(p, config.parse_fixed_point(cfg))

    def one_row(N):
        return gap_vs_population(p, sol, [N],
                                 master_seed=nash["master_seed"]).rows[0]

    rows = _parallel_map(one_row, nash["Ns"], threads)
    header = (["N", "major_gap"]
              + ["type%d_gap" % k for k in range(p.K)] + ["max_gap"])
    _write_csv(out / "gaps.csv", header,
               [[row.N, row.major_gap] + list(row.type_gaps) + [row.max_gap]
                for row in rows])
    _write_summary(out, {
        "Ns": [row.N for row in rows],
        "max_gaps": [row.max_gap for row in rows],
        "all_nonnegative": bool(all(
            g >= -1e-8 for row in rows
            for g in [row.major_gap] + list(row.type_gaps))),
        "master_seed": nash["master_seed"],
    })
    _write_manifest(out, "nash-gap", cfg_path, cfg, nash["master_seed"],
                    {"wall_s": time.monotonic() - started})
    return 0


def cmd_verify(out, threads: int) -> int:
    results = verify.run_suites()
    width = max(len(r.name) for r in results)
    for r in results:
        print("%s  %-*s  %5.1fs  %s" % (
            "PASS" if r.passed else "FAIL", width, r.name, r.seconds,
            r.detail))
    failed = verify.exit_code(results)
    print("%d/%d suites passed" % (len(results) - failed, len(results)))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify_report.json").write_text(json.dumps({
            "suites": [{"name": r.name, "passed": r.passed,
                        "detail": r.detail} for r in results],
            "failed": failed,
        }, sort_keys=True, indent=2) + "\n")
    return failed


def _threads_from(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("MFG_LQG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise SchemaError("MFG_LQG_THREADS must be an integer, got %r" % env)
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmlqg",
        description="Major-minor LQG mean-field game solver and simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve-lqg", "solve-mfg", "simulate", "nash-gap"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
    sp = sub.add_parser("verify")
    sp.add_argument("--out", default=None)
    sp.add_argument("--threads", type=int, default=None)
    return parser


_COMMANDS = {
    "solve-lqg": cmd_solve_lqg,
    "solve-mfg": cmd_solve_mfg,
    "simulate": cmd_simulate,
    "nash-gap": cmd_nash_gap,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = _threads_from(args)
        if args.command == "verify":
            return cmd_verify(args.out, threads)
        cfg = config.load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, args.config, out,
                                       getattr(args, "seed", None), threads)
    except SchemaError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except NumericalError as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return 3
    except AssumptionViolationError as exc:
        print("assumption violation: %s" % exc, file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
