"""Uniform Cartesian grids with nodal Q1 fields and cell-centred gradients.

Nodal values live on the grid vertices.  Gradients are those of the
multilinear interpolant evaluated at cell centres, which is also the single
quadrature point of every cell.  On periodic grids node ``n`` is node ``0``,
so only ``n`` nodes per axis are stored.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

PERIODIC = "periodic"
DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class PeriodicGrid:
    """``n`` cells per axis on the box ``(0, side)^dim``.

    The name follows the cell-problem use; ``topology="dirichlet"`` gives
    the same cells with ``n + 1`` nodes per axis, boundary included.
    """

    n: int
    dim: int = 2
    topology: str = PERIODIC
    side: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.topology not in (PERIODIC, DIRICHLET):
            raise ValueError(f"unknown topology {self.topology!r}")
        if not self.side > 0:
            raise ValueError("side must be positive")

    @property
    def periodic(self) -> bool:
        return self.topology == PERIODIC

    @property
    def h(self) -> float:
        return self.side / self.n

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def node_shape(self) -> tuple:
        m = self.n if self.periodic else self.n + 1
        return (m,) * self.dim

    @property
    def cell_shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def num_cells(self) -> int:
        return self.n ** self.dim

    def node_coordinates(self) -> np.ndarray:
        """Array of shape ``node_shape + (dim,)``."""
        axes = [np.arange(m) * self.h for m in self.node_shape]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def cell_centers(self) -> np.ndarray:
        """Array of shape ``cell_shape + (dim,)``."""
        axes = [(np.arange(self.n) + 0.5) * self.h for _ in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def boundary_mask(self) -> np.ndarray:
        """Boolean mask over nodes; all False on periodic grids."""
        mask = np.zeros(self.node_shape, dtype=bool)
        if not self.periodic:
            for k in range(self.dim):
                idx = [slice(None)] * self.dim
                idx[k] = 0
                mask[tuple(idx)] = True
                idx[k] = -1
                mask[tuple(idx)] = True
        return mask

    @cached_property
    def _corner_nodes(self) -> np.ndarray:
        """Flat node index of each cell corner, shape ``(2**dim, num_cells)``."""
        cells = np.indices(self.cell_shape).reshape(self.dim, -1)
        m = self.node_shape[0]
        out = []
        for offset in itertools.product((0, 1), repeat=self.dim):
            idx = cells + np.array(offset)[:, None]
            if self.periodic:
                idx = idx % self.n
            out.append(np.ravel_multi_index(tuple(idx), (m,) * self.dim))
        return np.array(out)

    @cached_property
    def gradient_operator(self) -> sp.csr_matrix:
        """Sparse map from flat nodal values to stacked cell gradients.

        Row ``k * num_cells + c`` holds the derivative along axis ``k`` at
        the centre of cell ``c``.
        """
        corners = self._corner_nodes
        weight = 1.0 / (self.h * 2 ** (self.dim - 1))
        rows, cols, vals = [], [], []
        cell_ids = np.arange(self.num_cells)
        for j, offset in enumerate(itertools.product((0, 1), repeat=self.dim)):
            for k in range(self.dim):
                rows.append(k * self.num_cells + cell_ids)
                cols.append(corners[j])
                vals.append(np.full(self.num_cells, (2 * offset[k] - 1) * weight))
        G = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dim * self.num_cells, self.num_nodes),
        )
        return G.tocsr()

    @cached_property
    def averaging_operator(self) -> sp.csr_matrix:
        """Sparse map from flat nodal values to cell-centre values."""
        corners = self._corner_nodes
        rows = np.tile(np.arange(self.num_cells), corners.shape[0])
        vals = np.full(rows.size, 1.0 / corners.shape[0])
        A = sp.coo_matrix((vals, (rows, corners.ravel())),
                          shape=(self.num_cells, self.num_nodes))
        return A.tocsr()

    def hourglass_basis(self) -> np.ndarray:
        """Orthonormal basis of the null space of ``gradient_operator``.

        Constants, plus on even periodic grids the checkerboard-type modes
        that one-point quadrature cannot see.  Shape ``(num_nodes, k)``.
        """
        if not self.periodic:
            return np.zeros((self.num_nodes, 0))
        idx = np.indices(self.node_shape)
        cols = [np.ones(self.node_shape)]
        if self.n % 2 == 0:
            for a, b in itertools.combinations(range(self.dim), 2):
                sign = (-1.0) ** (idx[a] + idx[b])
                rest = [k for k in range(self.dim) if k not in (a, b)]
                for free in itertools.product(range(self.n), repeat=len(rest)):
                    sel = np.ones(self.node_shape, dtype=bool)
                    for k, v in zip(rest, free):
                        sel &= idx[k] == v
                    cols.append(np.where(sel, sign, 0.0))
        B = np.stack([c.ravel() for c in cols], axis=1)
        # the slice modes are linearly dependent in 3-D; an SVD keeps the span exact
        u, s, _ = np.linalg.svd(B, full_matrices=False)
        return u[:, s > 1e-10 * s.max()]


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal scalar field; ``values`` has shape ``grid.node_shape``."""

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size != self.grid.num_nodes:
            raise ValueError(
                f"expected {self.grid.num_nodes} nodal values, got {values.size}")
        object.__setattr__(self, "values", values.reshape(self.grid.node_shape))

    @classmethod
    def from_function(cls, grid: PeriodicGrid, func) -> "ScalarField":
        x = grid.node_coordinates()
        return cls(grid, func(*np.moveaxis(x, -1, 0)))


@dataclass(frozen=True, eq=False)
class VectorField:
    """Cell-centred vector field; ``values`` has shape ``cell_shape + (dim,)``."""

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        g = self.grid
        if values.size != g.num_cells * g.dim:
            raise ValueError(
                f"expected {g.num_cells} cell vectors, got {values.size // g.dim}")
        object.__setattr__(self, "values", values.reshape(g.cell_shape + (g.dim,)))

    def flat(self) -> np.ndarray:
        """View as ``(num_cells, dim)``."""
        return self.values.reshape(-1, self.grid.dim)


def gradient(f: ScalarField) -> VectorField:
    g = f.grid
    stacked = g.gradient_operator @ f.values.ravel()
    return VectorField(g, stacked.reshape(g.dim, g.num_cells).T)


def cell_average(f: ScalarField) -> np.ndarray:
    """Nodal values averaged to cell centres, shape ``cell_shape``."""
    g = f.grid
    return (g.averaging_operator @ f.values.ravel()).reshape(g.cell_shape)


def integrate(f, grid: PeriodicGrid | None = None) -> float:
    """Midpoint rule; accepts a ScalarField or a cellwise array with ``grid``."""
    if isinstance(f, ScalarField):
        return float(cell_average(f).sum() * f.grid.cell_volume)
    if grid is None:
        raise TypeError("a grid is required for cellwise arrays")
    f = np.asarray(f, dtype=float)
    if f.size != grid.num_cells:
        raise ValueError("cellwise array does not match the grid")
    return float(f.sum() * grid.cell_volume)


def project_mean_zero(f: ScalarField) -> ScalarField:
    if not f.grid.periodic:
        raise ValueError("mean-zero projection is only defined on periodic grids")
    # On periodic grids every node touches 2**dim cells, so the cell-average
    # mean equals the plain nodal mean.
    mean = f.values.mean()
    return ScalarField(f.grid, f.values - mean)
