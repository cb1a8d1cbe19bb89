"""Dirichlet problems on a box: the eps-periodic composite and its homogenized limit."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cell import CellEvaluator, CellSolution
from .constitutive import FluxLaw
from .errors import NonConvergence, ResolutionMismatch, SingularSystem, TableRangeExceeded
from .grid import DIRICHLET, PeriodicGrid, ScalarField, VectorField, gradient, integrate
from .microstructure import Microstructure, cell_phases
from .solver import NewtonTrace, PowerLawSystem, SolverConfig, solve_with_continuation

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DomainProblem:
    """Homogeneous Dirichlet problem on ``(0, side)^dim`` with an L2 load.

    ``load`` is a constant or nodal values on ``grid``.
    """

    grid: PeriodicGrid
    load: float | np.ndarray = 1.0

    def __post_init__(self):
        if self.grid.topology != DIRICHLET:
            raise ValueError("domain problems need a dirichlet grid")
        if self.grid.n < 4:
            raise ValueError("domain grids need N >= 4")
        if not np.isscalar(self.load):
            vals = np.asarray(self.load, float)
            if vals.size != self.grid.num_nodes:
                raise ValueError("nodal load does not match the grid")

    @classmethod
    def unit_square(cls, N: int, load=1.0, dim: int = 2, side: float = 1.0):
        return cls(PeriodicGrid(N, dim, DIRICHLET, side), load)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.grid.boundary_mask().ravel())

    def load_vector(self) -> np.ndarray:
        g = self.grid
        if np.isscalar(self.load):
            f_cell = np.full(g.num_cells, float(self.load))
        else:
            f_cell = g.averaging_operator @ np.asarray(self.load, float).ravel()
        return (g.averaging_operator.T @ (g.cell_volume * f_cell))[self.interior]

    def system(self, phases) -> PowerLawSystem:
        G = self.grid.gradient_operator[:, self.interior]
        return PowerLawSystem(G, self.grid.dim, self.grid.cell_volume, phases,
                              load=self.load_vector())

    def field(self, u_free) -> ScalarField:
        vals = np.zeros(self.grid.num_nodes)
        vals[self.interior] = u_free
        return ScalarField(self.grid, vals)


def phase_norms(law: FluxLaw, phases, grad: VectorField) -> tuple[float, float]:
    """``(int chi1 |grad|^p1, int chi2 |grad|^p2)``."""
    mag = np.linalg.norm(grad.flat(), axis=1)
    g = grad.grid
    i1 = integrate(np.where(phases == 1, mag ** law.p1, 0.0), g)
    i2 = integrate(np.where(phases == 2, mag ** law.p2, 0.0), g)
    return i1, i2


@dataclass(frozen=True, eq=False)
class EpsSolution:
    eps: float
    u: ScalarField
    phases: np.ndarray
    norms: tuple
    residual_norm: float
    iterations: int
    converged: bool = True

    @property
    def grad(self) -> VectorField:
        return gradient(self.u)


def check_eps_alignment(grid: PeriodicGrid, eps: float) -> int:
    """Elements per eps-cell edge; raises unless eps-cells tile the box on element lines."""
    if not eps > 0:
        raise ResolutionMismatch(f"eps must be positive, got {eps}")
    k = 1.0 / eps
    if abs(k - round(k)) > 1e-9:
        raise ResolutionMismatch(f"eps={eps} is not of the form 1/k")
    cells = grid.side / eps
    per = grid.n * eps / grid.side
    if abs(cells - round(cells)) > 1e-9 or abs(per - round(per)) > 1e-9 or round(per) < 2:
        raise ResolutionMismatch(
            f"eps={eps} does not tile a grid of {grid.n} elements with >= 2 elements per eps-cell")
    return int(round(per))


def solve_dirichlet_eps(problem: DomainProblem, law: FluxLaw, micro: Microstructure, eps: float,
                        cfg: SolverConfig = SolverConfig(), trace: NewtonTrace | None = None,
                        allow_partial: bool = False) -> EpsSolution:
    """Newton solve of the eps-problem.

    With ``allow_partial`` a stalled solve returns its best iterate flagged
    ``converged=False`` instead of raising.
    """
    check_eps_alignment(problem.grid, eps)
    phases = cell_phases(micro, problem.grid, eps)
    system = problem.system(phases)
    trace = NewtonTrace() if trace is None else trace
    converged = True
    if not np.any(system.load):
        u, res = np.zeros(system.nfree), 0.0
    else:
        try:
            u, res = solve_with_continuation(system, law, cfg, trace=trace)
        except NonConvergence as exc:
            if not allow_partial or exc.best is None:
                raise
            u, res, converged = exc.best, exc.residual, False
    field_u = problem.field(u)
    norms = phase_norms(law, phases, gradient(field_u))
    return EpsSolution(float(eps), field_u, phases, norms, float(res), trace.iterations, converged)


class FluxTable:
    """Homogenized flux on a uniform xi-lattice, evaluated by multilinear interpolation.

    Lattice nodes are solved on demand through the cell evaluator, so the
    table grows with the range of gradients the outer solve visits.
    """

    def __init__(self, evaluator: CellEvaluator, spacing: float = 0.05, cap: float = 10.0):
        if not spacing > 0:
            raise ValueError("table spacing must be positive")
        self.evaluator = evaluator
        self.spacing = float(spacing)
        self.cap = float(cap)
        self.nodes: dict[tuple, CellSolution] = {}
        self.dim = evaluator.grid.dim

    @property
    def law(self) -> FluxLaw:
        return self.evaluator.law

    @property
    def micro(self) -> Microstructure:
        return self.evaluator.micro

    def refine(self) -> None:
        self.spacing /= 2.0
        self.nodes = {}

    def _locate(self, xi):
        xi = np.atleast_2d(np.asarray(xi, float))
        if np.any(np.abs(xi) > self.cap):
            raise TableRangeExceeded(
                f"|xi| component {np.abs(xi).max():.3g} exceeds the table cap {self.cap}")
        s = xi / self.spacing
        base = np.floor(s).astype(np.int64)
        return base, s - base

    def ensure(self, base) -> None:
        offsets = np.array(list(itertools.product((0, 1), repeat=self.dim)))
        needed = np.unique((base[:, None, :] + offsets[None]).reshape(-1, self.dim), axis=0)
        missing = [tuple(int(v) for v in row) for row in needed if tuple(int(v) for v in row) not in self.nodes]
        if missing:
            sols = self.evaluator.many([np.array(m, float) * self.spacing for m in missing])
            for m, s in zip(missing, sols):
                self.nodes[m] = s

    def _gather(self, base, quantity):
        """Corner values of ``quantity(CellSolution)`` per query, shape ``(2**dim, M, k)``."""
        lo = base.min(axis=0)
        hi = base.max(axis=0) + 1
        shape = tuple(hi - lo + 1)
        sample = np.atleast_1d(quantity(next(iter(self.nodes.values()))))
        dense = np.full(shape + sample.shape, np.nan)
        for idx, sol in self.nodes.items():
            rel = np.array(idx) - lo
            if np.all(rel >= 0) and np.all(rel < shape):
                dense[tuple(rel)] = quantity(sol)
        out = []
        for offset in itertools.product((0, 1), repeat=self.dim):
            rel = base - lo + np.array(offset)
            out.append(dense[tuple(rel.T)])
        return np.array(out)

    def interpolate(self, xi, quantity=lambda s: s.b, jacobian: bool = False):
        base, t = self._locate(xi)
        self.ensure(base)
        corners = self._gather(base, quantity)
        offsets = list(itertools.product((0, 1), repeat=self.dim))
        w = np.stack([np.where(np.array(o) == 1, t, 1 - t) for o in offsets])  # (2^d, M, d)
        value = np.einsum("cm,cmk->mk", w.prod(axis=2), corners)
        if not jacobian:
            return value
        jac = np.zeros(value.shape + (self.dim,))
        for k in range(self.dim):
            wk = w.copy()
            wk[:, :, k] = np.array([1.0 if o[k] else -1.0 for o in offsets])[:, None] / self.spacing
            jac[:, :, k] = np.einsum("cm,cmj->mj", wk.prod(axis=2), corners)
        return value, jac

    def __call__(self, xi):
        return self.interpolate(xi)

    def moment(self, xi, phase: int, q: float) -> np.ndarray:
        """Interpolated ``int_Y chi_phase |p(y, xi)|^q dy``."""
        return self.interpolate(xi, lambda s: s.phase_moment(phase, q))[:, 0]

    def diagnostics(self) -> dict:
        idx = np.array(list(self.nodes)) if self.nodes else np.zeros((0, self.dim))
        return {
            "spacing": self.spacing,
            "nodes": len(self.nodes),
            "range_lo": np.round(idx.min(axis=0) * self.spacing, 12).tolist() if len(idx) else [],
            "range_hi": np.round(idx.max(axis=0) * self.spacing, 12).tolist() if len(idx) else [],
        }

    def holdout_error(self, xi, count: int = 4) -> dict:
        """Compare interpolated and exact b at midpoints of table cells that ``xi`` visits."""
        base, _ = self._locate(xi)
        cells = np.unique(base, axis=0)
        if count <= 0 or len(cells) == 0:
            return {"holdout_points": 0, "holdout_abs_error": 0.0, "holdout_rel_error": 0.0}
        pick = cells[np.linspace(0, len(cells) - 1, min(count, len(cells))).round().astype(int)]
        mids = (pick + 0.5) * self.spacing
        exact = np.array([s.b for s in self.evaluator.many(mids)])
        approx = self.interpolate(mids)
        err = np.linalg.norm(exact - approx, axis=1)
        rel = err / np.maximum(np.linalg.norm(exact, axis=1), 1e-300)
        return {"holdout_points": len(mids), "holdout_abs_error": float(err.max()),
                "holdout_rel_error": float(rel.max())}


@dataclass(frozen=True, eq=False)
class HomogSolution:
    u: ScalarField
    residual_norm: float
    iterations: int
    table_info: dict
    integrability: float
    table: FluxTable | None = field(default=None, repr=False)

    @property
    def grad(self) -> VectorField:
        return gradient(self.u)


def integrability_report(h: HomogSolution, law: FluxLaw) -> float:
    """``int_Omega |grad u|^p2``."""
    mag = np.linalg.norm(h.grad.flat(), axis=1)
    return integrate(mag ** law.p2, h.u.grid)


def _table_jacobian(system: PowerLawSystem, jac):
    K = None
    for a in range(system.dim):
        for b in range(system.dim):
            term = system._blocks_t[a] @ sp.diags(system.vol * jac[:, a, b]) @ system._blocks[b]
            K = term if K is None else K + term
    return K.tocsc()


def solve_homogenized(problem: DomainProblem, table: FluxTable, cfg: SolverConfig = SolverConfig(),
                      max_refinements: int = 2, holdout: int = 4) -> HomogSolution:
    """Newton on ``-div b(grad u) = f`` with tabulated ``b`` and its table-consistent Jacobian.

    The Jacobian of the multilinear interpolant is not symmetric, so each
    step uses a sparse direct solve and backtracks on the residual norm.
    When backtracking fails the table spacing is halved and Newton resumes.
    """
    system = problem.system(np.ones(problem.grid.num_cells, dtype=int))
    u = np.zeros(system.nfree)

    def residual(v):
        b = table(system.gradients(v))
        return system.residual_from_flux(b)

    iterations = 0
    refinements = 0
    r = residual(u)
    res = float(np.linalg.norm(r))
    while res > cfg.tol:
        if iterations >= cfg.max_iter:
            raise NonConvergence(f"homogenized Newton hit max_iter with residual {res:.3e}",
                                 best=problem.field(u), residual=res)
        _, jac = table.interpolate(system.gradients(u), jacobian=True)
        try:
            d = spla.spsolve(_table_jacobian(system, jac), -r)
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc
        if not np.all(np.isfinite(d)):
            raise SingularSystem("homogenized Jacobian solve produced non-finite values")
        # Keep early steps from dragging the table far outside the solution's range.
        grad_now = np.linalg.norm(system.gradients(u), axis=1).max()
        step = np.linalg.norm((system.G @ d).reshape(system.dim, -1), axis=0).max()
        cap = max(grad_now, 4 * table.spacing)
        if step > cap:
            d *= cap / step
        alpha = 1.0
        while alpha > 1e-8:
            r_new = residual(u + alpha * d)
            res_new = float(np.linalg.norm(r_new))
            if res_new <= (1 - cfg.armijo * alpha) * res:
                break
            alpha *= cfg.backtrack
        else:
            if refinements >= max_refinements:
                raise NonConvergence(f"homogenized Newton stalled at residual {res:.3e}",
                                     best=problem.field(u), residual=res)
            refinements += 1
            table.refine()
            log.info("refined flux table to spacing %g", table.spacing)
            r = residual(u)
            res = float(np.linalg.norm(r))
            continue
        u = u + alpha * d
        r, res = r_new, res_new
        iterations += 1
        log.debug("homogenized it=%d alpha=%.3g residual=%.3e", iterations, alpha, res)
    field_u = problem.field(u)
    info = table.diagnostics() if table.nodes else {"spacing": table.spacing, "nodes": 0,
                                                    "range_lo": [], "range_hi": []}
    grads = gradient(field_u).flat()
    info.update(table.holdout_error(grads, holdout) if np.any(grads) else
                {"holdout_points": 0, "holdout_abs_error": 0.0, "holdout_rel_error": 0.0})
    info["refinements"] = refinements
    h = HomogSolution(field_u, res, iterations, info, 0.0, table)
    return HomogSolution(field_u, res, iterations, info, integrability_report(h, table.law), table)


@dataclass
class AprioriTable:
    rows: list  # (eps, int chi1 |grad|^p1, int chi2 |grad|^p2, sum)

    @property
    def max_total(self) -> float:
        return max(r[3] for r in self.rows)

    @property
    def ratio(self) -> float:
        totals = [r[3] for r in self.rows]
        lo = min(totals)
        return max(totals) / lo if lo > 0 else (1.0 if max(totals) == 0 else np.inf)


def apriori_report(solutions) -> AprioriTable:
    """Phase-wise gradient norms per eps, copied straight from the solutions."""
    solutions = list(solutions)
    if not solutions:
        raise ValueError("apriori_report needs at least one solution")
    return AprioriTable([(s.eps, s.norms[0], s.norms[1], s.norms[0] + s.norms[1]) for s in solutions])
