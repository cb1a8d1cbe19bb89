"""Damped inexact Newton for the discrete power-law energy.

The discrete problems on the unit cell and on the domain share one form:
minimise ``sum_c vol W_c(offset_c + (G u)_c) - F.u`` over nodal ``u``,
where ``G`` stacks the cell-centred gradients of the free nodes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import FluxLaw, RegularizationPolicy, energy_density, flux, flux_jacobian
from .errors import NonConvergence, SingularSystem

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 200
    delta_reg: float = 1e-8
    backtrack: float = 0.5
    armijo: float = 1e-4
    continuation: int = 4
    # residual target for the intermediate continuation stages
    stage_tol: float = 1e-6
    # CG stopping: ||K d + r|| <= forcing * ||r||
    forcing: float = 1e-2

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if not 0 < self.armijo < 1:
            raise ValueError("armijo constant must lie in (0, 1)")
        if self.continuation < 0:
            raise ValueError("continuation must be >= 0")
        if not self.delta_reg > 0:
            raise ValueError("delta_reg must be positive")

    def key(self) -> tuple:
        return (self.tol, self.max_iter, self.delta_reg, self.backtrack,
                self.armijo, self.continuation, self.stage_tol, self.forcing)


@dataclass
class NewtonTrace:
    energies: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    iterations: int = 0


class PowerLawSystem:
    """Assembled pieces of one discrete power-law problem.

    ``G`` has ``dim * ncell`` rows (axis-major) and one column per free node.
    ``kernel`` is an orthonormal basis of directions with zero gradient,
    which Newton increments are kept orthogonal to.
    """

    def __init__(self, G, dim, vol, phases, offset=None, load=None, kernel=None):
        self.G = sp.csr_matrix(G)
        self.dim = dim
        self.ncell = G.shape[0] // dim
        self.nfree = G.shape[1]
        self.vol = vol
        self.phases = np.asarray(phases)
        self.offset = np.zeros((self.ncell, dim)) if offset is None else np.asarray(offset, float)
        self.load = np.zeros(self.nfree) if load is None else np.asarray(load, float)
        self.kernel = kernel
        self._blocks = [self.G[k * self.ncell:(k + 1) * self.ncell] for k in range(dim)]
        self._blocks_t = [b.T.tocsr() for b in self._blocks]

    def gradients(self, u):
        return self.offset + (self.G @ u).reshape(self.dim, self.ncell).T

    def energy(self, law, u):
        xi = self.gradients(u)
        return self.vol * np.sum(energy_density(law, self.phases, xi)) - self.load @ u

    def residual_from_flux(self, a):
        return self.G.T @ (self.vol * a.T.ravel()) - self.load

    def residual(self, law, u):
        return self.residual_from_flux(flux(law, self.phases, self.gradients(u)))

    def jacobian(self, law, u, reg):
        J = flux_jacobian(law, self.phases, self.gradients(u), reg) * self.vol
        K = None
        for a in range(self.dim):
            for b in range(self.dim):
                term = self._blocks_t[a] @ sp.diags(J[:, a, b]) @ self._blocks[b]
                K = term if K is None else K + term
        return K.tocsr()

    def project(self, v):
        if self.kernel is not None and self.kernel.shape[1]:
            v = v - self.kernel @ (self.kernel.T @ v)
        return v


def _cg_direction(K, rhs, forcing, project):
    diag = K.diagonal()
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise SingularSystem("Jacobian has a non-positive diagonal entry")
    M = sp.diags(1.0 / diag)
    d, info = spla.cg(K, rhs, rtol=forcing, atol=0.0, M=M, maxiter=20 * K.shape[0])
    if info < 0:
        raise SingularSystem(f"conjugate gradient breakdown (info={info})")
    return project(d)


def newton(system: PowerLawSystem, law: FluxLaw, u0, cfg: SolverConfig, tol: float,
           trace: NewtonTrace | None = None, direct: bool = False):
    """Minimise the discrete energy from ``u0``; returns ``(u, residual_norm)``."""
    reg = RegularizationPolicy(cfg.delta_reg)
    u = system.project(np.array(u0, dtype=float)) if system.kernel is not None else np.array(u0, float)
    r = system.residual(law, u)
    res = float(np.linalg.norm(r))
    energy = system.energy(law, u)
    if trace is not None:
        trace.energies.append(energy)
        trace.residuals.append(res)
    for it in range(cfg.max_iter):
        if res <= tol:
            return u, res
        K = system.jacobian(law, u, reg)
        rhs = system.project(-r)
        if direct:
            d = system.project(spla.spsolve(K.tocsc(), rhs))
        else:
            d = _cg_direction(K, rhs, min(cfg.forcing, max(res, 1e-14) ** 0.5), system.project)
        slope = float(r @ d)
        if not slope < 0:
            raise SingularSystem("Newton increment is not a descent direction")
        alpha = 1.0
        accepted = False
        r_trial = None
        # Energy decreases below ~1e-10 |E| are round-off; there the residual
        # norm is the only trustworthy merit function.
        if -slope > 1e-10 * abs(energy):
            while alpha > 1e-10:
                trial = u + alpha * d
                e_trial = system.energy(law, trial)
                if e_trial <= energy + cfg.armijo * alpha * slope:
                    accepted = True
                    break
                alpha *= cfg.backtrack
        if not accepted:
            alpha = 1.0
            while alpha > 1e-4:
                trial = u + alpha * d
                r_trial = system.residual(law, trial)
                if np.linalg.norm(r_trial) <= (1 - cfg.armijo * alpha) * res:
                    accepted = True
                    break
                alpha *= cfg.backtrack
            if not accepted:
                break
            e_trial = system.energy(law, trial)
        u = trial
        energy = e_trial
        r = system.residual(law, u) if r_trial is None else r_trial
        res = float(np.linalg.norm(r))
        if trace is not None:
            trace.energies.append(energy)
            trace.residuals.append(res)
            trace.iterations += 1
        log.debug("newton it=%d alpha=%.3g residual=%.3e", it, alpha, res)
    if res <= tol:
        return u, res
    raise NonConvergence(f"Newton stalled with residual {res:.3e} > {tol:.1e}", best=u, residual=res)


def continuation_laws(law: FluxLaw, stages: int) -> list[FluxLaw]:
    """Exponents interpolated geometrically from (2, 2) to ``(p1, p2)``."""
    if stages == 0 or (law.p1 == 2 and law.p2 == 2):
        return [law]
    out = []
    for k in range(stages + 1):
        t = k / stages
        out.append(law.with_exponents(2.0 * (law.p1 / 2.0) ** t, 2.0 * (law.p2 / 2.0) ** t))
    out[-1] = law
    return out


def solve_with_continuation(system: PowerLawSystem, law: FluxLaw, cfg: SolverConfig,
                            u0=None, trace: NewtonTrace | None = None, direct: bool = False):
    """Warm-started Newton solves along the exponent path; returns ``(u, residual)``."""
    u = np.zeros(system.nfree) if u0 is None else np.asarray(u0, float)
    laws = continuation_laws(law, cfg.continuation) if u0 is None else [law]
    for k, stage in enumerate(laws):
        last = k == len(laws) - 1
        tol = cfg.tol if last else max(cfg.tol, cfg.stage_tol)
        stage_trace = trace if last else None
        try:
            u, res = newton(system, stage, u, cfg, tol, stage_trace, direct)
        except NonConvergence as exc:
            if last:
                raise
            u = exc.best
    return u, res


def with_tol(cfg: SolverConfig, tol: float) -> SolverConfig:
    return replace(cfg, tol=tol)
