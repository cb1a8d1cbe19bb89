"""Command line entry point: ``powerhom {cell,homog,solve,sweep,check}``.

Exit codes: 0 success, 1 a solver stage failed, 2 bad configuration,
3 the sweep ran but a threshold check failed.  Failures are printed to
stderr as a YAML ``failures:`` list.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np
import yaml

from . import cache as cache_mod
from .cache import CellCache
from .cell import CellEvaluator, energy_identity
from .config import RunConfig, load_config
from .constitutive import check_continuity, check_monotonicity, random_pairs
from .domain import DomainProblem, FluxTable, solve_dirichlet_eps, solve_homogenized
from .errors import ConfigError, PowerhomError
from .grid import PeriodicGrid
from .report import emit_plots, sweep, write_report

EXIT_OK, EXIT_STAGE, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3


def _failures(items) -> None:
    sys.stderr.write(yaml.safe_dump({"failures": items}, sort_keys=False))


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path, header, rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _vec_cols(prefix, dim):
    return [f"{prefix}{k}" for k in range(dim)]


def cmd_cell(cfg: RunConfig, cache: CellCache, args) -> int:
    grid = PeriodicGrid(args.n or cfg.cell_n, cfg.dim)
    ev = CellEvaluator(cfg.law, cfg.micro, grid, cfg.solver, cache, cfg.threads)
    rows, failures = [], []
    for xi in cfg.xi_list:
        try:
            sol = ev(xi)
        except PowerhomError as exc:
            failures.append({"stage": f"cell xi={list(xi)}", "error": type(exc).__name__,
                             "message": str(exc)})
            continue
        mean_defect = float(np.abs(sol.p_field.flat().mean(axis=0) - sol.xi).max())
        row = [*map(_fmt, sol.xi), *map(_fmt, sol.b), _fmt(mean_defect),
               _fmt(energy_identity(sol)), _fmt(sol.residual_norm), sol.iterations]
        rows.append(row)
        print("xi=" + ",".join(row[:cfg.dim]) + "  b=" + ",".join(row[cfg.dim:2 * cfg.dim])
              + f"  mean_defect={mean_defect:.2e}  energy_defect={float(row[-3]):.2e}")
    header = _vec_cols("xi", cfg.dim) + _vec_cols("b", cfg.dim) + [
        "mean_defect", "energy_defect", "residual", "iterations"]
    _write_csv(os.path.join(cfg.out_dir, "cell.csv"), header, rows)
    if failures:
        _failures(failures)
        return EXIT_STAGE
    return EXIT_OK


def cmd_homog(cfg: RunConfig, cache: CellCache, args) -> int:
    grid = PeriodicGrid(args.n or cfg.cell_n, cfg.dim)
    ev = CellEvaluator(cfg.law, cfg.micro, grid, cfg.solver, cache, cfg.threads)
    try:
        sols = ev.many(cfg.xi_list)
    except PowerhomError as exc:
        _failures([{"stage": "homog", "error": type(exc).__name__, "message": str(exc)}])
        return EXIT_STAGE
    rows = [[*map(_fmt, s.xi), *map(_fmt, s.b)] for s in sols]
    for r in rows:
        print("  ".join(r))
    _write_csv(os.path.join(cfg.out_dir, "homog.csv"),
               _vec_cols("xi", cfg.dim) + _vec_cols("b", cfg.dim), rows)
    return EXIT_OK


def _domain_record(cfg: RunConfig, eps: float, u, residual: float, iterations: int):
    load = cfg.load if not isinstance(cfg.load, str) else float("nan")
    head = np.zeros(cfg.dim)
    head[0] = eps
    head[1] = load
    return cache_mod.Record(cache_mod.DOMAIN_TAG, cfg.law, cfg.micro, cfg.dim, cfg.N,
                            cfg.solver.tol, iterations, head, u.values.ravel(),
                            np.zeros(cfg.dim), residual)


def cmd_solve(cfg: RunConfig, cache: CellCache, args) -> int:
    problem = DomainProblem.unit_square(cfg.N, cfg.load_values(), cfg.dim, cfg.side)
    try:
        if args.eps is None:
            ev = CellEvaluator(cfg.law, cfg.micro, PeriodicGrid(cfg.cell_n, cfg.dim),
                               cfg.solver, cache, cfg.threads)
            sol = solve_homogenized(problem, FluxTable(ev, cfg.table.spacing, cfg.table.cap),
                                    cfg.solver, cfg.table.max_refinements, cfg.table.holdout)
            name, eps = "homogenized", 0.0
            print(f"homogenized: residual={sol.residual_norm:.3e} iterations={sol.iterations} "
                  f"int|grad u|^p2={sol.integrability!r}")
        else:
            eps = float(args.eps)
            sol = solve_dirichlet_eps(problem, cfg.law, cfg.micro, eps, cfg.solver)
            name = f"eps_{eps:g}"
            print(f"eps={eps:g}: residual={sol.residual_norm:.3e} iterations={sol.iterations} "
                  f"norms={sol.norms[0]!r},{sol.norms[1]!r}")
    except PowerhomError as exc:
        _failures([{"stage": "solve", "error": type(exc).__name__, "message": str(exc)}])
        return EXIT_STAGE
    coords = sol.u.grid.node_coordinates().reshape(-1, cfg.dim)
    rows = [[*map(_fmt, c), _fmt(v)] for c, v in zip(coords, sol.u.values.ravel())]
    _write_csv(os.path.join(cfg.out_dir, f"{name}.csv"), _vec_cols("x", cfg.dim) + ["u"], rows)
    cache_mod.write_records(os.path.join(cfg.out_dir, f"{name}.bin"),
                            [_domain_record(cfg, eps, sol.u, sol.residual_norm, sol.iterations)])
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, cache: CellCache, args) -> int:
    report = sweep(cfg, cache)
    for path in write_report(report, cfg.out_dir):
        logging.getLogger("powerhom").info("wrote %s", path)
    if not args.no_plots:
        emit_plots(report, cfg.out_dir)
    for c in report.checks():
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    if report.failures:
        _failures(report.failures)
        return EXIT_STAGE
    if not all(c.passed for c in report.checks()):
        return EXIT_CHECK
    return EXIT_OK


def cmd_check(cfg: RunConfig, cache: CellCache, args) -> int:
    rng = np.random.default_rng(args.seed)
    pairs = random_pairs(rng, args.samples, cfg.dim, args.bound)
    ok = True
    for phase in (1, 2):
        for rep in (check_monotonicity(cfg.law, phase, pairs), check_continuity(cfg.law, phase, pairs)):
            ok &= rep.passed
            print(f"{'PASS' if rep.passed else 'FAIL'}  phase {phase} {rep.name}: "
                  f"constant={rep.constant:.6g} extreme ratio={rep.extreme_ratio:.6g} "
                  f"samples={rep.samples} violations={len(rep.violations)}")
    return EXIT_OK if ok else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML run config")
    common.add_argument("--cache", help="cell-solution cache file (env POWERHOM_CACHE)")
    common.add_argument("--out", help="output directory (env POWERHOM_OUT)")
    common.add_argument("--threads", type=int, help="worker threads for cell solves")
    common.add_argument("--verbose", "-v", action="count", default=0)

    parser = argparse.ArgumentParser(prog="powerhom", description="Homogenization of two-phase power-law composites")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("cell", parents=[common], help="cell solves for the configured xi list")
    p.add_argument("--n", type=int, help="cell grid size (default: cell.n)")
    p.set_defaults(func=cmd_cell)
    p = sub.add_parser("homog", parents=[common], help="homogenized flux b over the xi list")
    p.add_argument("--n", type=int, help="cell grid size (default: cell.n)")
    p.set_defaults(func=cmd_homog)
    p = sub.add_parser("solve", parents=[common], help="one eps-problem or the homogenized problem")
    p.add_argument("--eps", type=float, help="period; omit for the homogenized problem")
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("sweep", parents=[common], help="full pipeline over the eps list")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("check", parents=[common], help="constitutive property suites")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--bound", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(args.cache, args.out, args.threads)
    except (ConfigError, OSError) as exc:
        _failures([{"stage": "config", "error": type(exc).__name__, "message": str(exc)}])
        return EXIT_CONFIG
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
    except OSError as exc:
        _failures([{"stage": "config", "error": type(exc).__name__,
                    "message": f"output directory not writable: {exc}"}])
        return EXIT_CONFIG
    cache = CellCache(cfg.cache_path)
    try:
        return args.func(cfg, cache, args)
    except ConfigError as exc:
        _failures([{"stage": "config", "error": type(exc).__name__, "message": str(exc)}])
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
