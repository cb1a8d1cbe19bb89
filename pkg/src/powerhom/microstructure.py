"""Two-phase unit-cell geometries and their eps-periodic rescalings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import PeriodicGrid

HOMOGENEOUS = "homogeneous"
LAYERED = "layered"
DISPERSED = "dispersed"


@dataclass(frozen=True)
class Microstructure:
    """Phase-1 region inside ``Y = (0,1)^dim``; phase 2 fills the rest.

    layered: ``a <= y[axis] < b`` (0-based ``axis``, the layer normal).
    dispersed: the open disk ``|y - center| < radius``.
    homogeneous: phase 1 everywhere.
    """

    kind: str
    axis: int = 1
    a: float = 0.25
    b: float = 0.75
    center: tuple = ()
    radius: float = 0.0

    def __post_init__(self):
        if self.kind == LAYERED:
            if not 0 < self.a < self.b < 1:
                raise ValueError(f"layer bounds need 0 < a < b < 1, got ({self.a}, {self.b})")
            if self.axis < 0:
                raise ValueError("axis must be non-negative")
        elif self.kind == DISPERSED:
            c = np.asarray(self.center, dtype=float)
            if c.ndim != 1 or c.size == 0:
                raise ValueError("dispersed microstructure needs a center point")
            if not self.radius > 0:
                raise ValueError("radius must be positive")
            if np.any(c - self.radius <= 0) or np.any(c + self.radius >= 1):
                raise ValueError("the closed inclusion must lie strictly inside the unit cell")
            object.__setattr__(self, "center", tuple(float(v) for v in c))
        elif self.kind != HOMOGENEOUS:
            raise ValueError(f"unknown microstructure kind {self.kind!r}")

    @classmethod
    def layered(cls, a: float, b: float, axis: int = 1) -> "Microstructure":
        return cls(LAYERED, axis=axis, a=float(a), b=float(b))

    @classmethod
    def dispersed(cls, center, radius: float) -> "Microstructure":
        return cls(DISPERSED, center=tuple(center), radius=float(radius))

    @classmethod
    def homogeneous(cls) -> "Microstructure":
        return cls(HOMOGENEOUS)

    def key(self) -> tuple:
        if self.kind == LAYERED:
            return (self.kind, self.axis, self.a, self.b)
        if self.kind == DISPERSED:
            return (self.kind, self.center, self.radius)
        return (self.kind,)


def indicator(m: Microstructure, y) -> np.ndarray:
    """Phase (1 or 2) at points ``y`` of shape ``(..., dim)``, extended periodically."""
    y = np.mod(np.asarray(y, dtype=float), 1.0)
    if m.kind == HOMOGENEOUS:
        inside = np.ones(y.shape[:-1], dtype=bool)
    elif m.kind == LAYERED:
        if m.axis >= y.shape[-1]:
            raise ValueError(f"layer axis {m.axis} out of range for dim {y.shape[-1]}")
        t = y[..., m.axis]
        inside = (m.a <= t) & (t < m.b)
    else:
        c = np.asarray(m.center)
        if c.size != y.shape[-1]:
            raise ValueError("inclusion center dimension does not match the points")
        inside = np.sum((y - c) ** 2, axis=-1) < m.radius ** 2
    return np.where(inside, 1, 2)


def rescaled_indicator(m: Microstructure, eps: float, x) -> np.ndarray:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return indicator(m, np.asarray(x, dtype=float) / eps)


def cell_phases(m: Microstructure, grid: PeriodicGrid, eps: float = 1.0) -> np.ndarray:
    """Phase per cell of ``grid`` sampled at cell centres, shape ``(num_cells,)``."""
    return rescaled_indicator(m, eps, grid.cell_centers()).ravel()


def volume_fractions(m: Microstructure, grid: PeriodicGrid) -> tuple[float, float]:
    phases = cell_phases(m, grid)
    theta1 = np.count_nonzero(phases == 1) / phases.size
    return theta1, 1.0 - theta1
