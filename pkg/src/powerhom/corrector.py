"""Local averaging, corrector errors and gradient-moment bounds on eps-periodic media."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cache import CellCache
from .cell import CellEvaluator
from .constitutive import FluxLaw
from .domain import EpsSolution, HomogSolution
from .errors import ResolutionMismatch
from .grid import PeriodicGrid, VectorField
from .microstructure import Microstructure
from .solver import SolverConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AveragedField:
    """Per-eps-cell averages of a cellwise vector field.

    ``values`` has shape ``(k,)*dim + (dim,)`` for the ``k`` eps-cells per
    axis that fit inside the box; ``mask`` marks covered elements.
    """

    eps: float
    values: np.ndarray
    per_cell: int
    grid: PeriodicGrid
    mask: np.ndarray

    def on_elements(self) -> VectorField:
        """The piecewise-constant field on the element grid, zero off the covered set."""
        g = self.grid
        k = self.values.shape[0]
        out = np.zeros(g.cell_shape + (g.dim,))
        block = self.values
        for axis in range(g.dim):
            block = np.repeat(block, self.per_cell, axis=axis)
        out[(slice(0, k * self.per_cell),) * g.dim] = block
        return VectorField(g, out)


def eps_cell_size(grid: PeriodicGrid, eps: float) -> int:
    """Elements per eps-cell edge; eps-cell edges must fall on element lines."""
    if not eps > 0:
        raise ResolutionMismatch(f"eps must be positive, got {eps}")
    per = eps / grid.h
    if abs(per - round(per)) > 1e-9 or round(per) < 1:
        raise ResolutionMismatch(f"eps={eps} is not a multiple of the element size {grid.h}")
    return int(round(per))


def local_average(phi: VectorField, eps: float) -> AveragedField:
    g = phi.grid
    m = eps_cell_size(g, eps)
    k = g.n // m
    vals = phi.values[(slice(0, k * m),) * g.dim]
    shape = []
    for _ in range(g.dim):
        shape += [k, m]
    vals = vals.reshape(shape + [g.dim])
    avg = vals.mean(axis=tuple(range(1, 2 * g.dim, 2)))
    mask = np.zeros(g.cell_shape, dtype=bool)
    mask[(slice(0, k * m),) * g.dim] = True
    return AveragedField(float(eps), avg, m, g, mask)


def lp_norm(field: VectorField, p: float, weights=None) -> float:
    mag = np.linalg.norm(field.flat(), axis=1) ** p
    if weights is not None:
        mag = mag * weights
    return float((mag.sum() * field.grid.cell_volume) ** (1.0 / p))


@dataclass
class CorrectorErrorRecord:
    eps: float
    e1: float
    e2: float
    average_gap1: float  # int chi1 |M grad u - grad u|^p1
    average_gap2: float
    cell_solves: int
    cell_n: int
    phase_mismatch: float  # fraction of elements whose phase differs from the cell grid
    contraction_ok: bool = True  # ||M grad u||_p <= ||grad u||_p for p = p1, p2
    reconstruction: VectorField | None = field(default=None, repr=False)


def _element_cell_index(grid: PeriodicGrid, eps: float, n_cell: int) -> np.ndarray:
    """Flat cell-grid index of each element centre mapped by ``y = x/eps mod 1``."""
    y = np.mod(grid.cell_centers() / eps, 1.0)
    idx = np.minimum(np.floor(y * n_cell).astype(np.int64), n_cell - 1)
    return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), (n_cell,) * grid.dim).ravel()


def corrector_reconstruction(homog: HomogSolution, law: FluxLaw, micro: Microstructure, eps: float,
                             cfg: SolverConfig = SolverConfig(), cache: CellCache | None = None,
                             n_cell: int | None = None, threads: int = 1):
    """``p(x/eps, M_eps grad u)`` on the element grid; returns ``(field, averages, n_cell, solves)``."""
    averaged = local_average(homog.grad, eps)
    g = averaged.grid
    per = averaged.per_cell
    n_cell = per if n_cell is None else int(n_cell)
    if per % n_cell:
        raise ResolutionMismatch(f"cell grid n={n_cell} does not divide {per} elements per eps-cell")
    evaluator = CellEvaluator(law, micro, PeriodicGrid(n_cell, g.dim), cfg, cache, threads)
    k = averaged.values.shape[0]
    xis = averaged.values.reshape(-1, g.dim)
    sols = evaluator.many(xis)
    local = _element_cell_index(g, eps, n_cell)
    # which eps-cell each element belongs to (row-major over the k^dim block)
    owner = np.indices(g.cell_shape).reshape(g.dim, -1) // per
    covered = averaged.mask.ravel()
    owner_flat = np.zeros(g.num_cells, dtype=np.int64)
    owner_flat[covered] = np.ravel_multi_index(tuple(owner[:, covered]), (k,) * g.dim)
    recon = np.zeros((g.num_cells, g.dim))
    pfields = np.stack([s.p_field.flat() for s in sols])
    recon[covered] = pfields[owner_flat[covered], local[covered]]
    return VectorField(g, recon), averaged, n_cell, len({tuple(s.xi) for s in sols}), sols


def corrector_error(eps_sol: EpsSolution, homog: HomogSolution, law: FluxLaw, micro: Microstructure,
                    eps: float, cfg: SolverConfig = SolverConfig(), cache: CellCache | None = None,
                    n_cell: int | None = None, threads: int = 1,
                    keep_reconstruction: bool = False) -> CorrectorErrorRecord:
    """Phase-wise ``int chi_i^eps |p_eps(x, M_eps grad u) - grad u_eps|^p_i``.

    Elements outside the covered eps-cells see a zero corrector.
    """
    recon, averaged, n_cell, solves, sols = corrector_reconstruction(
        homog, law, micro, eps, cfg, cache, n_cell, threads)
    g = recon.grid
    phases = np.asarray(eps_sol.phases)
    expo = law.exponent(phases)
    diff = np.linalg.norm(recon.flat() - eps_sol.grad.flat(), axis=1) ** expo
    gap = np.linalg.norm(averaged.on_elements().flat() - homog.grad.flat(), axis=1) ** expo
    vol = g.cell_volume
    e1 = float(diff[phases == 1].sum() * vol)
    e2 = float(diff[phases == 2].sum() * vol)
    a1 = float(gap[phases == 1].sum() * vol)
    a2 = float(gap[phases == 2].sum() * vol)
    cell_ph = sols[0].phases if sols else None
    mismatch = 0.0
    if cell_ph is not None:
        mapped = cell_ph[_element_cell_index(g, eps, n_cell)]
        covered = averaged.mask.ravel()
        mismatch = float(np.mean(mapped[covered] != phases[covered]))
    averaged_field = averaged.on_elements()
    contraction = all(lp_norm(averaged_field, p) <= lp_norm(homog.grad, p) * (1 + 1e-12)
                      for p in (law.p1, law.p2))
    if not contraction:
        log.warning("local average failed the contraction check at eps=%g", eps)
    return CorrectorErrorRecord(float(eps), e1, e2, a1, a2, solves, n_cell, mismatch, contraction,
                                recon if keep_reconstruction else None)


def box_mask(grid: PeriodicGrid, lower, upper) -> np.ndarray:
    """Elements whose centres lie in the box; box faces must be element lines."""
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    if lower.size != grid.dim or upper.size != grid.dim or np.any(upper <= lower):
        raise ValueError("box needs lower < upper in every coordinate")
    for v in np.concatenate([lower, upper]):
        t = v / grid.h
        if abs(t - round(t)) > 1e-9 or v < 0 or v > grid.side:
            raise ResolutionMismatch(f"box face {v} is not an element line of the grid")
    c = grid.cell_centers().reshape(-1, grid.dim)
    return np.all((c > lower) & (c < upper), axis=1)


def moment_lower_bound(homog: HomogSolution, q: float, lower, upper,
                       evaluator: CellEvaluator | None = None) -> tuple[float, float]:
    """``int_D int_Y chi_i(y) |p(y, grad u(x))|^q dy dx`` for ``i = 1, 2``.

    With an ``evaluator`` the inner cell integral is computed by one cell solve
    per element; otherwise it is interpolated on the homogenized flux table,
    which overestimates it by O(spacing^2) since the moment is convex in xi.
    """
    if q < 2:
        raise ValueError("moment exponent q must be >= 2")
    g = homog.u.grid
    inside = box_mask(g, lower, upper)
    xi = homog.grad.flat()[inside]
    vol = g.cell_volume
    if evaluator is None:
        if homog.table is None:
            raise ValueError("homogenized solution carries no flux table; pass an evaluator")
        return tuple(float(homog.table.moment(xi, i, q).sum() * vol) for i in (1, 2))
    sols = evaluator.many(xi)
    return tuple(float(sum(s.phase_moment(i, q) for s in sols) * vol) for i in (1, 2))


def empirical_moment(eps_sol: EpsSolution, q: float, lower, upper) -> tuple[float, float]:
    """``int_D chi_i^eps |grad u_eps|^q`` for ``i = 1, 2``."""
    if q < 2:
        raise ValueError("moment exponent q must be >= 2")
    g = eps_sol.u.grid
    inside = box_mask(g, lower, upper)
    mag = np.linalg.norm(eps_sol.grad.flat(), axis=1) ** q
    phases = np.asarray(eps_sol.phases)
    vol = g.cell_volume
    return tuple(float(mag[inside & (phases == i)].sum() * vol) for i in (1, 2))


@dataclass
class MomentRecord:
    q: float
    lower: tuple
    upper: tuple
    lower_bound: tuple
    empirical: dict  # eps -> (phase 1, phase 2)

