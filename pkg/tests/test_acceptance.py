"""End-to-end acceptance criteria, one PASS/FAIL line each.

The layered and dispersed sweeps run once per module (a few minutes each)
and are shared by the criteria that read their tables.
"""
import os

import numpy as np
import pytest

from oracles import laminate_normal_flux
from powerhom.cache import CellCache
from powerhom.cell import (CellEvaluator, check_b_continuity, check_b_monotone, energy_identity,
                           solve_cell, solve_dual_layer)
from powerhom.config import load_config
from powerhom.constitutive import FluxLaw
from powerhom.domain import DomainProblem, FluxTable, solve_homogenized
from powerhom.grid import PeriodicGrid
from powerhom.microstructure import Microstructure
from powerhom.report import report_tables, sweep, write_report

pytestmark = pytest.mark.slow

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
LAW = FluxLaw(2, 3, 1, 2)
LAYERED = Microstructure.layered(0.25, 0.75)
DISPERSED = Microstructure.dispersed((0.5, 0.5), 0.25)
XIS = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]


def verdict(capsys, number, title, passed, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title} | {detail}")
    assert passed, f"criterion {number}: {detail}"


def _run_sweep(name, tmp):
    cfg = load_config(os.path.join(ROOT, "configs", f"{name}.yaml"))
    cfg = cfg.with_overrides(cache=str(tmp / "cells.bin"), out=str(tmp / "out"))
    report = sweep(cfg, CellCache(cfg.cache_path))
    write_report(report, cfg.out_dir)
    return cfg, report


@pytest.fixture(scope="module")
def layered_run(tmp_path_factory):
    return _run_sweep("layered", tmp_path_factory.mktemp("layered"))


@pytest.fixture(scope="module")
def dispersed_run(tmp_path_factory):
    return _run_sweep("dispersed", tmp_path_factory.mktemp("dispersed"))


@pytest.fixture(scope="module")
def cell64():
    return {(m.kind, xi): solve_cell(LAW, m, xi, PeriodicGrid(64))
            for m in (LAYERED, DISPERSED) for xi in XIS}


def test_c01_corrector_mean(capsys, cell64):
    worst = max(float(np.abs(s.p_field.flat().mean(axis=0) - s.xi).max()) for s in cell64.values())
    verdict(capsys, 1, "cellwise mean of p equals xi", worst <= 1e-12,
            f"max defect {worst:.2e} over {len(cell64)} solves (tol 1e-12)")


def test_c02_energy_identity(capsys, cell64):
    worst = max(energy_identity(s) for s in cell64.values())
    verdict(capsys, 2, "energy identity", worst <= 1e-8, f"max defect {worst:.2e} (tol 1e-8)")


def test_c03_layered_exactness(capsys):
    ev64 = CellEvaluator(LAW, LAYERED, PeriodicGrid(64))
    ev128 = CellEvaluator(LAW, LAYERED, PeriodicGrid(128))
    par = float(np.abs(ev64.b((1.0, 0.0)) - [0.5 * 1 + 0.5 * 2, 0.0]).max())
    t, _, _ = laminate_normal_flux(2, 3, 1, 2, 0.5)
    b64, b128 = ev64.b((0.0, 1.0))[1], ev128.b((0.0, 1.0))[1]
    tol = 10 * max(abs(b64 - b128), ev64.cfg.tol)
    normal = abs(b64 - t)
    verdict(capsys, 3, "layered exactness", par <= 1e-8 and normal <= tol,
            f"|b(e1) - arithmetic| = {par:.2e} (tol 1e-8); |b(e2) - oracle| = {normal:.2e} "
            f"(tol {tol:.2e})")


def test_c04_linear_laminate(capsys):
    ev = CellEvaluator(FluxLaw(2, 2, 1, 2), LAYERED, PeriodicGrid(32))
    B = np.column_stack([ev.b((1.0, 0.0)), ev.b((0.0, 1.0))])
    err = float(np.abs(B - np.diag([1.5, 4.0 / 3.0])).max())
    verdict(capsys, 4, "linear laminate", err <= 1e-6,
            f"b matrix {B.ravel().round(10).tolist()}, max error {err:.2e} (tol 1e-6)")


def test_c05_monotone_and_continuous(capsys):
    pts = [(1, 0), (-1, 0), (0, 1), (0, -1), (2, 0), (1, 1)]
    pairs = [(a, b) for i, a in enumerate(pts) for b in pts[i + 1:]]
    details, ok = [], True
    for micro in (LAYERED, DISPERSED):
        ev = CellEvaluator(LAW, micro, PeriodicGrid(32))
        mono = check_b_monotone(ev, pairs)
        cont = check_b_continuity(ev, pairs, line=((1.0, 1.0), (0.0, 1.0)))
        slope = cont.extra["slope"]
        ok &= mono.passed and mono.extreme >= 0 and slope >= 1 / (LAW.p2 - 1) - 0.05
        details.append(f"{micro.kind}: min slack {mono.extreme:.3e}, slope {slope:.3f}")
    verdict(capsys, 5, "monotone and continuous b", ok, "; ".join(details) + " (slope limit 0.45)")


def test_c06_apriori_bound(capsys, layered_run):
    _, rep = layered_run
    totals = [r["total"] for r in rep.apriori]
    ratio = max(totals) / min(totals)
    verdict(capsys, 6, "a priori bound", len(totals) == 3 and ratio <= 1.5,
            f"totals {[round(t, 6) for t in totals]}, max/min {ratio:.4f} (limit 1.5)")


def _decay(rep):
    out = {}
    for key in ("e1", "e2"):
        vals = [r[key] for r in rep.corrector]
        monotone = all(b < a for a, b in zip(vals, vals[1:]))
        out[key] = (monotone and len(vals) == 3 and vals[0] / vals[-1] >= 1.3, vals[0] / vals[-1])
    return out


def test_c07_corrector_convergence(capsys, layered_run, dispersed_run):
    parts, ok = [], True
    for name, (_, rep) in (("layered", layered_run), ("dispersed", dispersed_run)):
        d = _decay(rep)
        ok &= d["e1"][0] and d["e2"][0] and rep.ok
        parts.append(f"{name}: e1 x{d['e1'][1]:.2f}, e2 x{d['e2'][1]:.2f}")
    verdict(capsys, 7, "corrector error decay", ok, "; ".join(parts) + " (limit x1.3, monotone)")


def test_c08_moment_lower_bound(capsys, layered_run, dispersed_run):
    parts, ok = [], True
    for name, (cfg, rep) in (("layered", layered_run), ("dispersed", dispersed_run)):
        rows = [r for r in rep.moment_rows() if r["eps"] == 0.125]
        assert {(r["q"], r["phase"]) for r in rows} == {(2, 1), (2, 2), (3, 1), (3, 2)}
        for r in rows:
            good = r["lower_bound"] <= r["empirical"] * 1.05
            ok &= good
            parts.append(f"{name} q={r['q']:g} i={r['phase']}: {r['ratio']:.4f}{'' if good else ' !'}")
    verdict(capsys, 8, "gradient moment lower bound", ok,
            "lower/empirical at eps=1/8: " + ", ".join(parts) + " (limit 1.05)")


def test_c09_dual_field(capsys):
    fields = [solve_dual_layer(LAW, LAYERED, (0.0, 1.0), PeriodicGrid(n)) for n in (64, 128)]
    ok, parts = True, []
    for n, d in zip((64, 128), fields):
        phases = solve_cell(FluxLaw(2, 2, 1, 1), LAYERED, (0.0, 0.0), PeriodicGrid(n)).phases
        exact = bool(np.all(d.tau.flat()[phases == 1] == [0.0, -1.0]))
        ok &= exact and d.divergence_residual <= 1e-8 and np.isfinite(d.q1_ratio)
        parts.append(f"n={n}: residual {d.divergence_residual:.1e}, tau=-xi on phase 1 {exact}, "
                     f"q1 ratio {d.q1_ratio:.6f}")
    drift = abs(fields[1].q1_ratio / fields[0].q1_ratio - 1)
    verdict(capsys, 9, "dual field", ok and drift <= 0.10,
            "; ".join(parts) + f"; refinement change {drift:.2%} (limit 10%)")


def test_c10_higher_integrability(capsys, layered_run):
    cfg, rep = layered_run
    fine = rep.homogenized["integrability"]
    ev = CellEvaluator(cfg.law, cfg.micro, PeriodicGrid(cfg.cell_n), cfg.solver,
                       CellCache(cfg.cache_path))
    coarse = solve_homogenized(DomainProblem.unit_square(64), FluxTable(ev, cfg.table.spacing),
                               cfg.solver).integrability
    change = abs(fine / coarse - 1)
    verdict(capsys, 10, "higher integrability", np.isfinite(fine) and change < 0.10,
            f"int |grad u|^p2: N=64 {coarse:.6f}, N=128 {fine:.6f}, change {change:.2%} (limit 10%)")


def test_c11_determinism(capsys, layered_run):
    cfg, cold = layered_run
    files = report_tables(cold)
    on_disk = {n: open(os.path.join(cfg.out_dir, n)).read() for n in files}
    warm_cache = CellCache(cfg.cache_path)
    warm = sweep(cfg, warm_cache)
    same = report_tables(warm) == files == on_disk
    stats = warm_cache.stats()
    verdict(capsys, 11, "determinism and cache", same and stats["misses"] == 0,
            f"{len(files)} CSVs identical cold vs warm: {same}; warm cache "
            f"hits {stats['hits']} misses {stats['misses']}")
