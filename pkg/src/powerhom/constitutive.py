"""Two-phase power-law flux ``A(y, xi) = sigma(y) |xi|^(p(y)-2) xi``.

All functions are vectorised: ``xi`` has shape ``(..., dim)`` and ``phase``
is an int or an integer array broadcastable to ``xi.shape[:-1]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FluxLaw:
    p1: float
    p2: float
    sigma1: float
    sigma2: float

    def __post_init__(self):
        if not 2 <= self.p1:
            raise ValueError(f"p1 must be >= 2, got {self.p1}")
        if not self.p1 <= self.p2 < np.inf:
            raise ValueError(f"need p1 <= p2 < inf, got p1={self.p1}, p2={self.p2}")
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ValueError("coefficients sigma1, sigma2 must be positive")

    @property
    def q1(self) -> float:
        """Conjugate of p2."""
        return self.p2 / (self.p2 - 1.0)

    @property
    def q2(self) -> float:
        """Conjugate of p1."""
        return self.p1 / (self.p1 - 1.0)

    def exponent(self, phase) -> np.ndarray:
        return np.where(np.asarray(phase) == 1, self.p1, self.p2)

    def coefficient(self, phase) -> np.ndarray:
        return np.where(np.asarray(phase) == 1, self.sigma1, self.sigma2)

    def with_exponents(self, p1: float, p2: float) -> "FluxLaw":
        return FluxLaw(p1, p2, self.sigma1, self.sigma2)

    def key(self) -> tuple:
        return (self.p1, self.p2, self.sigma1, self.sigma2)


@dataclass(frozen=True)
class RegularizationPolicy:
    """Gradient floor used only inside Newton Jacobians."""

    delta_reg: float = 1e-8

    def __post_init__(self):
        if not self.delta_reg > 0:
            raise ValueError("delta_reg must be positive")


def _norm(xi):
    return np.sqrt(np.sum(xi * xi, axis=-1))


def _power(base, expo):
    # 0 ** 0 is 1 in numpy, which is what p == 2 needs.
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.power(base, expo)


def flux(law: FluxLaw, phase, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    p = law.exponent(phase)
    s = law.coefficient(phase)
    r = _norm(xi)
    scale = np.where(r > 0, s * _power(r, p - 2.0), np.where(p == 2, s, 0.0))
    return scale[..., None] * xi


def energy_density(law: FluxLaw, phase, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    p = law.exponent(phase)
    s = law.coefficient(phase)
    return s / p * _power(_norm(xi), p)


def flux_jacobian(law: FluxLaw, phase, xi, reg: RegularizationPolicy = RegularizationPolicy()):
    """``sigma (m^(p-2) I + (p-2) m^(p-4) xi xi^T)`` with ``m^2 = |xi|^2 + delta^2``."""
    xi = np.asarray(xi, dtype=float)
    dim = xi.shape[-1]
    p = law.exponent(phase)
    s = law.coefficient(phase)
    m = np.sqrt(np.sum(xi * xi, axis=-1) + reg.delta_reg ** 2)
    a = s * m ** (p - 2.0)
    c = s * (p - 2.0) * m ** (p - 4.0)
    return a[..., None, None] * np.eye(dim) + c[..., None, None] * xi[..., :, None] * xi[..., None, :]


def dual_density(law: FluxLaw, phase, eta) -> np.ndarray:
    """Convex conjugate of ``energy_density``: ``sigma^(1-q) |eta|^q / q``, ``q = p/(p-1)``."""
    eta = np.asarray(eta, dtype=float)
    p = law.exponent(phase)
    s = law.coefficient(phase)
    q = p / (p - 1.0)
    return s ** (1.0 - q) * _norm(eta) ** q / q


@dataclass
class PropertyReport:
    """Outcome of a sampled inequality check."""

    name: str
    constant: float
    extreme_ratio: float
    samples: int
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def _pairs(pairs):
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 3 or arr.shape[1] != 2 or arr.shape[0] == 0:
        raise ValueError("pairs must have shape (k, 2, dim) with k >= 1")
    return arr[:, 0], arr[:, 1]


def check_monotonicity(law: FluxLaw, phase: int, pairs, rtol: float = 1e-12) -> PropertyReport:
    """``(A(x1) - A(x2), x1 - x2) >= sigma 2^(2-p) |x1 - x2|^p`` on every pair."""
    x1, x2 = _pairs(pairs)
    p = float(law.exponent(phase))
    c2 = float(law.coefficient(phase)) * 2.0 ** (2.0 - p)
    d = x1 - x2
    lhs = np.sum((flux(law, phase, x1) - flux(law, phase, x2)) * d, axis=-1)
    rhs = c2 * _norm(d) ** p
    bad = lhs < rhs * (1 - rtol)
    nz = rhs > 0
    ratio = float(np.min(lhs[nz] / _norm(d[nz]) ** p)) if nz.any() else np.inf
    viol = [(x1[i].tolist(), x2[i].tolist()) for i in np.flatnonzero(bad)]
    return PropertyReport("monotonicity", c2, ratio, len(x1), viol)


def check_continuity(law: FluxLaw, phase: int, pairs, rtol: float = 1e-12) -> PropertyReport:
    """``|A(x1) - A(x2)| <= sigma (p-1) |x1 - x2| (1 + |x1| + |x2|)^(p-2)`` on every pair."""
    x1, x2 = _pairs(pairs)
    p = float(law.exponent(phase))
    c1 = float(law.coefficient(phase)) * (p - 1.0)
    gap = _norm(x1 - x2) * (1 + _norm(x1) + _norm(x2)) ** (p - 2.0)
    lhs = _norm(flux(law, phase, x1) - flux(law, phase, x2))
    bad = lhs > c1 * gap * (1 + rtol)
    nz = gap > 0
    ratio = float(np.max(lhs[nz] / gap[nz])) if nz.any() else 0.0
    viol = [(x1[i].tolist(), x2[i].tolist()) for i in np.flatnonzero(bad)]
    return PropertyReport("continuity", c1, ratio, len(x1), viol)


def random_pairs(rng: np.random.Generator, count: int, dim: int = 2, bound: float = 2.0):
    return rng.uniform(-bound, bound, size=(count, 2, dim))
