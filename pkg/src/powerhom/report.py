"""The sweep pipeline and its serialization.

CSV schemas (one header row, floats written with ``repr`` so values round-trip):

``apriori.csv``
    config_hash, eps, norm1, norm2, total, residual, iterations, converged
    where ``norm_i = int chi_i^eps |grad u_eps|^p_i``.
``corrector_error.csv``
    config_hash, eps, e1, e2, average_gap1, average_gap2, cell_solves, cell_n,
    phase_mismatch, contraction_ok, converged
``moments.csv``
    config_hash, q, phase, box, lower_bound, eps, empirical, ratio, converged
    with ``ratio = lower_bound / empirical`` and ``box`` as ``lo0:hi0;lo1:hi1``.

``manifest.yaml`` holds everything that is not a pure function of the config
and cache contents (timings, cache statistics) together with the config echo,
b-table diagnostics, threshold checks and the failure list.
"""
from __future__ import annotations

import csv
import io
import logging
import os
import time
from dataclasses import dataclass, field
from importlib import metadata

import numpy as np
import yaml

from .cache import CellCache
from .cell import CellEvaluator
from .config import RunConfig
from .corrector import MomentRecord, corrector_error, empirical_moment, moment_lower_bound
from .domain import DomainProblem, FluxTable, solve_dirichlet_eps, solve_homogenized
from .errors import PowerhomError
from .grid import PeriodicGrid

log = logging.getLogger(__name__)

APRIORI_FIELDS = ["config_hash", "eps", "norm1", "norm2", "total", "residual", "iterations", "converged"]
CORRECTOR_FIELDS = ["config_hash", "eps", "e1", "e2", "average_gap1", "average_gap2", "cell_solves",
                    "cell_n", "phase_mismatch", "contraction_ok", "converged"]
MOMENT_FIELDS = ["config_hash", "q", "phase", "box", "lower_bound", "eps", "empirical", "ratio",
                 "converged"]


def artifact_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class SweepReport:
    config: RunConfig
    config_hash: str
    version: str
    homogenized: dict = field(default_factory=dict)
    table: dict = field(default_factory=dict)
    apriori: list = field(default_factory=list)
    corrector: list = field(default_factory=list)
    moments: list = field(default_factory=list)  # MomentRecord
    failures: list = field(default_factory=list)  # {"stage", "error", "message"}
    timings: dict = field(default_factory=dict)
    cache_stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def moment_rows(self) -> list[dict]:
        rows = []
        for rec in self.moments:
            box = ";".join(f"{lo!r}:{hi!r}" for lo, hi in zip(rec.lower, rec.upper))
            for phase in (1, 2):
                lb = rec.lower_bound[phase - 1]
                for eps, (emp, conv) in rec.empirical.items():
                    value = emp[phase - 1]
                    rows.append({"q": rec.q, "phase": phase, "box": box, "lower_bound": lb,
                                 "eps": eps, "empirical": value,
                                 "ratio": lb / value if value > 0 else (0.0 if lb == 0 else np.inf),
                                 "converged": conv and self.homogenized.get("converged", False)})
        return rows

    def checks(self) -> list[Check]:
        """Threshold checks on the measured trends."""
        th = self.config.thresholds
        out = []
        if self.apriori:
            totals = [r["total"] for r in self.apriori]
            ratio = max(totals) / min(totals) if min(totals) > 0 else np.inf
            out.append(Check("apriori_ratio", ratio <= th.apriori_ratio,
                             f"max/min total = {ratio:.4f} (limit {th.apriori_ratio})"))
        if len(self.corrector) >= 2:
            for key in ("e1", "e2"):
                vals = [r[key] for r in self.corrector]
                if not any(vals):
                    out.append(Check(f"decay_{key}", True, "identically zero (phase absent)"))
                    continue
                monotone = all(b < a for a, b in zip(vals, vals[1:]))
                factor = vals[0] / vals[-1] if vals[-1] > 0 else np.inf
                out.append(Check(f"decay_{key}", monotone and factor >= th.decay_factor,
                                 f"monotone={monotone} factor={factor:.4f} "
                                 f"(limit {th.decay_factor})"))
        if self.moments:
            eps_min = min(self.config.eps_list)
            for row in self.moment_rows():
                if row["eps"] != eps_min:
                    continue
                passed = row["lower_bound"] <= row["empirical"] * (1 + th.moment_slack)
                out.append(Check(f"moment_q{row['q']:g}_phase{row['phase']}", passed,
                                 f"lower/empirical = {row['ratio']:.4f} "
                                 f"(limit {1 + th.moment_slack:g})"))
        return out

    def manifest(self) -> dict:
        return {
            "artifact_version": self.version,
            "config_hash": self.config_hash,
            "status": "ok" if self.ok else "failed",
            "failures": list(self.failures),
            "checks": [{"name": c.name, "passed": bool(c.passed), "detail": c.detail}
                       for c in self.checks()],
            "homogenized": dict(self.homogenized),
            "table": _plain(self.table),
            "cache": dict(self.cache_stats),
            "timings_seconds": {k: round(v, 3) for k, v in self.timings.items()},
            "config": self.config.to_dict(),
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    return obj


def _fail(report: SweepReport, stage: str, exc: Exception) -> None:
    log.error("stage %s failed: %s", stage, exc)
    entry = {"stage": stage, "error": type(exc).__name__, "message": str(exc)}
    xi = getattr(exc, "xi", None)
    if xi is not None:
        entry["xi"] = [float(v) for v in np.ravel(xi)]
    report.failures.append(entry)


def sweep(config: RunConfig, cache: CellCache | None = None) -> SweepReport:
    """Homogenized solve, eps-solves, corrector errors, a-priori table and moments."""
    report = SweepReport(config, config.hash(), artifact_version())
    cache = CellCache(config.cache_path) if cache is None else cache
    law, micro, cfg = config.law, config.micro, config.solver
    t_all = time.perf_counter()
    try:
        problem = DomainProblem.unit_square(config.N, config.load_values(), config.dim, config.side)
    except (PowerhomError, ValueError, OSError) as exc:
        _fail(report, "setup", exc)
        return report
    evaluator = CellEvaluator(law, micro, PeriodicGrid(config.cell_n, config.dim), cfg, cache,
                              config.threads)
    table = FluxTable(evaluator, config.table.spacing, config.table.cap)

    t = time.perf_counter()
    homog = None
    try:
        homog = solve_homogenized(problem, table, cfg, config.table.max_refinements,
                                  config.table.holdout)
        report.homogenized = {"residual": homog.residual_norm, "iterations": homog.iterations,
                              "integrability": homog.integrability, "converged": True}
        report.table = dict(homog.table_info)
    except PowerhomError as exc:
        _fail(report, "homogenized", exc)
        report.homogenized = {"converged": False}
    report.timings["homogenized"] = time.perf_counter() - t

    solutions = []
    for eps in config.eps_list:
        t = time.perf_counter()
        try:
            sol = solve_dirichlet_eps(problem, law, micro, eps, cfg, allow_partial=True)
        except PowerhomError as exc:
            _fail(report, f"eps={eps!r}", exc)
            continue
        if not sol.converged:
            report.failures.append({"stage": f"eps={eps!r}", "error": "NonConvergence",
                                    "message": f"residual {sol.residual_norm:.3e} above tolerance"})
        solutions.append(sol)
        report.apriori.append({"eps": eps, "norm1": sol.norms[0], "norm2": sol.norms[1],
                               "total": sol.norms[0] + sol.norms[1], "residual": sol.residual_norm,
                               "iterations": sol.iterations, "converged": sol.converged})
        report.timings[f"eps={eps!r}"] = time.perf_counter() - t
        if homog is None:
            continue
        t = time.perf_counter()
        try:
            rec = corrector_error(sol, homog, law, micro, eps, cfg, cache,
                                  config.corrector_cell_n, config.threads)
        except PowerhomError as exc:
            _fail(report, f"corrector eps={eps!r}", exc)
            continue
        report.corrector.append({"eps": eps, "e1": rec.e1, "e2": rec.e2,
                                 "average_gap1": rec.average_gap1, "average_gap2": rec.average_gap2,
                                 "cell_solves": rec.cell_solves, "cell_n": rec.cell_n,
                                 "phase_mismatch": rec.phase_mismatch,
                                 "contraction_ok": rec.contraction_ok, "converged": sol.converged})
        report.timings[f"corrector eps={eps!r}"] = time.perf_counter() - t

    if homog is not None and config.q_list:
        t = time.perf_counter()
        lower, upper = config.box
        for q in config.q_list:
            try:
                lb = moment_lower_bound(homog, q, lower, upper, evaluator)
            except PowerhomError as exc:
                _fail(report, f"moments q={q!r}", exc)
                continue
            emp = {s.eps: (empirical_moment(s, q, lower, upper), s.converged) for s in solutions}
            report.moments.append(MomentRecord(q, tuple(lower), tuple(upper), lb, emp))
        report.timings["moments"] = time.perf_counter() - t

    report.timings["total"] = time.perf_counter() - t_all
    report.cache_stats = cache.stats()
    return report


# ---------------------------------------------------------------- output

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv_text(fields, rows, tag) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        full = dict(row, config_hash=tag)
        w.writerow([_fmt(full[f]) for f in fields])
    return buf.getvalue()


def report_tables(report: SweepReport) -> dict:
    """File name -> CSV text."""
    tag = report.config_hash
    tables = {
        "apriori.csv": _csv_text(APRIORI_FIELDS, report.apriori, tag),
        "corrector_error.csv": _csv_text(CORRECTOR_FIELDS, report.corrector, tag),
    }
    if report.moments:
        tables["moments.csv"] = _csv_text(MOMENT_FIELDS, report.moment_rows(), tag)
    return tables


def write_report(report: SweepReport, out_dir) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, text in report_tables(report).items():
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        written.append(path)
    path = os.path.join(out_dir, "manifest.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump(report.manifest(), fh, sort_keys=False)
    written.append(path)
    return written


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_plots(report: SweepReport, out_dir) -> list[str]:
    """Corrector-error decay (log-log) and moment comparison as SVG.

    Output bytes depend only on the report: no timestamps, fixed hash salt.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    written = []
    style = {"svg.hashsalt": "powerhom", "svg.fonttype": "path"}
    with plt.rc_context(style):
        if report.corrector:
            eps = [r["eps"] for r in report.corrector]
            fig, ax = plt.subplots(figsize=(5, 4))
            for key, marker in (("e1", "o"), ("e2", "s")):
                ax.loglog(eps, [max(r[key], 1e-300) for r in report.corrector], marker=marker,
                          label=key)
            ax.set_xlabel("eps")
            ax.set_ylabel("corrector error")
            ax.legend()
            ax.grid(True, which="both", alpha=0.3)
            path = os.path.join(out_dir, "corrector_error.svg")
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
        rows = report.moment_rows()
        if rows:
            eps_min = min(r["eps"] for r in rows)
            rows = [r for r in rows if r["eps"] == eps_min]
            labels = [f"q={r['q']:g}, i={r['phase']}" for r in rows]
            x = np.arange(len(rows))
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.bar(x - 0.2, [r["lower_bound"] for r in rows], 0.4, label="lower bound")
            ax.bar(x + 0.2, [r["empirical"] for r in rows], 0.4, label=f"empirical, eps={eps_min:g}")
            ax.set_xticks(x)
            ax.set_xticklabels(labels)
            ax.set_yscale("log")
            ax.legend()
            path = os.path.join(out_dir, "moments.svg")
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written
