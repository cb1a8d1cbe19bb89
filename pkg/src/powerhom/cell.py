"""Periodic cell problem: correctors, homogenized flux and the layered dual field."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import cache as cache_mod
from .cache import CellCache
from .constitutive import FluxLaw, flux
from .errors import NonConvergence, WrongMicrostructure
from .grid import PeriodicGrid, ScalarField, VectorField, integrate
from .microstructure import LAYERED, Microstructure, cell_phases
from .solver import NewtonTrace, PowerLawSystem, SolverConfig, solve_with_continuation

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CellSolution:
    law: FluxLaw
    micro: Microstructure
    xi: np.ndarray
    grid: PeriodicGrid
    upsilon: ScalarField
    p_field: VectorField
    b: np.ndarray
    residual_norm: float
    iterations: int

    @property
    def phases(self) -> np.ndarray:
        return cell_phases(self.micro, self.grid)

    def phase_moment(self, phase: int, q: float) -> float:
        """``int_Y chi_phase |p(y, xi)|^q dy``."""
        mags = np.linalg.norm(self.p_field.flat(), axis=1) ** q
        return integrate(np.where(self.phases == phase, mags, 0.0), self.grid)


@lru_cache(maxsize=32)
def _cell_system(grid: PeriodicGrid, micro: Microstructure) -> PowerLawSystem:
    return PowerLawSystem(grid.gradient_operator, grid.dim, grid.cell_volume,
                          cell_phases(micro, grid), kernel=grid.hourglass_basis())


def _check_inputs(grid, xi):
    if not grid.periodic:
        raise ValueError("cell problems need a periodic grid")
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if xi.size != grid.dim:
        raise ValueError(f"xi has {xi.size} components, grid has dim {grid.dim}")
    return xi


def _assemble_solution(law, micro, xi, grid, u, res, iterations):
    system = _cell_system(grid, micro)
    system_offset = np.broadcast_to(xi, (system.ncell, grid.dim))
    p = system_offset + (system.G @ u).reshape(grid.dim, system.ncell).T
    b = grid.cell_volume * flux(law, system.phases, p).sum(axis=0)
    return CellSolution(law, micro, xi, grid, ScalarField(grid, u), VectorField(grid, p),
                        b, float(res), int(iterations))


def solve_cell(law: FluxLaw, micro: Microstructure, xi, grid: PeriodicGrid,
               cfg: SolverConfig = SolverConfig(), trace: NewtonTrace | None = None) -> CellSolution:
    """Galerkin solution of the periodic cell problem for macroscopic gradient ``xi``."""
    xi = _check_inputs(grid, xi)
    base = _cell_system(grid, micro)
    system = PowerLawSystem(base.G, grid.dim, base.vol, base.phases,
                            offset=np.broadcast_to(xi, (base.ncell, grid.dim)), kernel=base.kernel)
    trace = NewtonTrace() if trace is None else trace
    try:
        u, res = solve_with_continuation(system, law, cfg, trace=trace)
    except NonConvergence as exc:
        exc.xi = xi
        raise
    u = u - u.mean()
    return _assemble_solution(law, micro, xi, grid, u, res, trace.iterations)


def homogenized_flux(sol: CellSolution) -> np.ndarray:
    """``b(xi) = sum_cells A(y, p) vol``."""
    a = flux(sol.law, sol.phases, sol.p_field.flat())
    return sol.grid.cell_volume * a.sum(axis=0)


def energy_identity(sol: CellSolution) -> float:
    """``|int (A(p), p) - (b(xi), xi)|``, zero up to the discrete residual."""
    p = sol.p_field.flat()
    a = flux(sol.law, sol.phases, p)
    lhs = sol.grid.cell_volume * np.sum(a * p)
    return float(abs(lhs - homogenized_flux(sol) @ sol.xi))


class CellEvaluator:
    """Cached ``xi -> CellSolution`` for one law, microstructure and grid."""

    def __init__(self, law: FluxLaw, micro: Microstructure, grid: PeriodicGrid,
                 cfg: SolverConfig = SolverConfig(), cache: CellCache | None = None,
                 threads: int = 1):
        self.law = law
        self.micro = micro
        self.grid = grid
        self.cfg = cfg
        self.cache = CellCache() if cache is None else cache
        self.threads = max(1, int(threads))

    def _key(self, xi):
        return CellCache.make_key(self.law, self.micro, self.grid.dim, self.grid.n, self.cfg.tol, xi)

    def _from_record(self, xi, rec) -> CellSolution:
        return _assemble_solution(self.law, self.micro, xi, self.grid,
                                  rec.values.copy(), rec.residual, rec.iterations)

    def __call__(self, xi) -> CellSolution:
        xi = np.array(cache_mod.quantize(xi))
        key = self._key(xi)
        rec = self.cache.get(key)
        if rec is not None:
            return self._from_record(xi, rec)
        sol = solve_cell(self.law, self.micro, xi, self.grid, self.cfg)
        self.cache.put(key, cache_mod.Record(
            cache_mod.CELL_TAG, self.law, self.micro, self.grid.dim, self.grid.n, self.cfg.tol,
            sol.iterations, xi, sol.upsilon.values.ravel(), sol.b, sol.residual_norm))
        return sol

    def b(self, xi) -> np.ndarray:
        return self(xi).b

    def many(self, xis) -> list[CellSolution]:
        """Solve a batch; results come back in input order."""
        xis = [np.asarray(x, float) for x in xis]
        if self.threads == 1 or len(xis) < 2:
            return [self(x) for x in xis]
        with ThreadPoolExecutor(self.threads) as pool:
            return list(pool.map(self, xis))


@dataclass
class CheckReport:
    name: str
    passed: bool
    extreme: float
    rows: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def check_b_monotone(evaluator: CellEvaluator, pairs, rtol: float = 1e-9) -> CheckReport:
    """``(b1 - b2, x1 - x2) >= c sum_i int chi_i |p1 - p2|^p_i >= 0`` per pair.

    ``c = min(sigma) 2^(2 - p2)`` bounds every phase's monotonicity constant.
    """
    law = evaluator.law
    c = min(law.sigma1, law.sigma2) * 2.0 ** (2.0 - law.p2)
    rows, viol = [], []
    for x1, x2 in pairs:
        s1, s2 = evaluator(x1), evaluator(x2)
        lhs = float((s1.b - s2.b) @ (s1.xi - s2.xi))
        diff = np.linalg.norm(s1.p_field.flat() - s2.p_field.flat(), axis=1)
        phases = s1.phases
        expo = law.exponent(phases)
        rhs = c * integrate(diff ** expo, s1.grid)
        slack = lhs - rhs
        scale = max(abs(lhs), abs(rhs), 1e-300)
        ok = lhs >= -rtol * scale and slack >= -rtol * scale
        rows.append((s1.xi.tolist(), s2.xi.tolist(), lhs, rhs, slack))
        if not ok:
            viol.append((s1.xi.tolist(), s2.xi.tolist()))
    min_slack = min(r[4] for r in rows) if rows else np.inf
    return CheckReport("b-monotonicity", not viol, min_slack, rows, viol, {"constant": c})


def _continuity_majorant(law, x1, x2):
    n1, n2 = np.linalg.norm(x1), np.linalg.norm(x2)
    d = np.linalg.norm(x1 - x2)
    s = 1 + n1 ** law.p1 + n2 ** law.p1 + n1 ** law.p2 + n2 ** law.p2
    return (d ** (1 / (law.p1 - 1)) * s ** ((law.p1 - 2) / (law.p1 - 1))
            + d ** (1 / (law.p2 - 1)) * s ** ((law.p2 - 2) / (law.p2 - 1)))


def holder_slope(evaluator: CellEvaluator, base, direction, steps) -> float:
    """Least-squares slope of ``log|b(base + t dir) - b(base)|`` against ``log t``."""
    base = np.asarray(base, float)
    direction = np.asarray(direction, float)
    b0 = evaluator(base).b
    sols = evaluator.many([base + t * direction for t in steps])
    diffs = [np.linalg.norm(s.b - b0) for s in sols]
    lengths = [np.linalg.norm(t * direction) for t in steps]
    return float(np.polyfit(np.log(lengths), np.log(diffs), 1)[0])


def check_b_continuity(evaluator: CellEvaluator, pairs, line=None, steps=(1e-1, 1e-2, 1e-3, 1e-4),
                       slope_margin: float = 0.05) -> CheckReport:
    """Ratio of ``|b1 - b2|`` to the Hoelder-type majorant, plus a near-diagonal slope fit.

    ``line`` is ``(base, direction)``; when given, the fitted slope must be at
    least ``1/(p2 - 1) - slope_margin``.
    """
    law = evaluator.law
    rows = []
    for x1, x2 in pairs:
        s1, s2 = evaluator(x1), evaluator(x2)
        num = float(np.linalg.norm(s1.b - s2.b))
        den = float(_continuity_majorant(law, s1.xi, s2.xi))
        rows.append((s1.xi.tolist(), s2.xi.tolist(), num, den, num / den if den > 0 else 0.0))
    bad_pairs = [r[:2] for r in rows if r[3] == 0 and r[2] > 0]
    ratio = max((r[4] for r in rows), default=0.0)
    passed = np.isfinite(ratio) and not bad_pairs
    extra = {"constant_estimate": ratio}
    if line is not None:
        slope = holder_slope(evaluator, line[0], line[1], steps)
        threshold = 1.0 / (law.p2 - 1.0) - slope_margin
        extra.update(slope=slope, slope_threshold=threshold)
        passed = passed and slope >= threshold
    return CheckReport("b-continuity", bool(passed), ratio, rows, bad_pairs, extra)


@dataclass(frozen=True, eq=False)
class DualLayerField:
    tau: VectorField
    phi: ScalarField
    divergence_residual: float
    q1_ratio: float
    residual_norm: float
    iterations: int


def solve_dual_layer(law: FluxLaw, micro: Microstructure, xi, grid: PeriodicGrid,
                     cfg: SolverConfig = SolverConfig()) -> DualLayerField:
    """Divergence-free ``tau`` equal to ``-xi`` in phase 1 of a layered cell.

    In phase 2, ``tau = |grad phi|^(p2-2) grad phi`` where ``phi`` minimises
    ``int_R2 |grad phi|^p2 / p2 + xi . grad phi``; its natural boundary
    conditions carry the anti-periodic normal flux and the interface jump.
    ``phi`` is NaN at nodes that touch no phase-2 cell.
    """
    if micro.kind != LAYERED:
        raise WrongMicrostructure("the dual layer field needs a layered microstructure")
    xi = _check_inputs(grid, xi)
    phases = cell_phases(micro, grid)
    in2 = phases == 2
    G = grid.gradient_operator
    ncell = grid.num_cells
    rows = np.concatenate([k * ncell + np.flatnonzero(in2) for k in range(grid.dim)])
    G2 = G[rows]
    free = np.flatnonzero(np.asarray(abs(G2).sum(axis=0)).ravel() > 0)
    G2 = G2[:, free]
    vol = grid.cell_volume
    n2 = int(in2.sum())
    load = -(G2.T @ (vol * np.repeat(xi, n2)))
    kernel = grid.hourglass_basis()[free]
    basis, sv, _ = np.linalg.svd(kernel, full_matrices=False)
    kernel = basis[:, sv > 1e-10 * max(sv.max(initial=0.0), 1.0)]
    single = FluxLaw(law.p2, law.p2, 1.0, 1.0)
    system = PowerLawSystem(G2, grid.dim, vol, np.full(n2, 2), load=load, kernel=kernel)
    trace = NewtonTrace()
    if np.all(load == 0):
        u, res = np.zeros(len(free)), 0.0
    else:
        u, res = solve_with_continuation(system, single, cfg, trace=trace)
    grad2 = system.gradients(u)
    tau = np.tile(-xi, (ncell, 1))
    tau[in2] = flux(single, 2, grad2)
    # fix the additive constant: zero mean over phase-2 cells
    avg = (grid.averaging_operator[:, free] @ u)[in2].mean() if n2 else 0.0
    phi = np.full(grid.num_nodes, np.nan)
    phi[free] = u - avg
    div_res = float(np.linalg.norm(G.T @ (vol * tau.T.ravel())))
    nx = np.linalg.norm(xi)
    tq = integrate(np.linalg.norm(tau, axis=1) ** law.q1, grid)
    ratio = tq / nx ** law.q1 if nx > 0 else 0.0
    return DualLayerField(VectorField(grid, tau), ScalarField(grid, phi), div_res, ratio,
                          float(res), trace.iterations)


__all__ = [
    "CellSolution", "CellEvaluator", "CheckReport", "DualLayerField", "solve_cell",
    "homogenized_flux", "energy_identity", "check_b_monotone", "check_b_continuity",
    "holder_slope", "solve_dual_layer",
]
