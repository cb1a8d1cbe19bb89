import numpy as np
import pytest

from powerhom.constitutive import FluxLaw
from powerhom.errors import NonConvergence
from powerhom.grid import DIRICHLET, PeriodicGrid
from powerhom.solver import (NewtonTrace, PowerLawSystem, SolverConfig, continuation_laws, newton,
                             solve_with_continuation)


def _dirichlet_system(N=8, load=1.0):
    g = PeriodicGrid(N, topology=DIRICHLET)
    free = np.flatnonzero(~g.boundary_mask().ravel())
    G = g.gradient_operator[:, free]
    F = (g.averaging_operator.T @ np.full(g.num_cells, load * g.cell_volume))[free]
    return PowerLawSystem(G, 2, g.cell_volume, np.ones(g.num_cells, dtype=int), load=F)


@pytest.mark.parametrize("kwargs", [dict(tol=0), dict(max_iter=0), dict(backtrack=1.0),
                                    dict(armijo=0.0), dict(continuation=-1), dict(delta_reg=0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_continuation_path():
    law = FluxLaw(2, 3, 1, 2)
    laws = continuation_laws(law, 4)
    assert len(laws) == 5
    assert laws[0].p1 == 2 and laws[0].p2 == 2
    assert laws[-1] == law
    assert all(a.p2 <= b.p2 for a, b in zip(laws, laws[1:]))
    assert continuation_laws(law, 0) == [law]
    assert continuation_laws(FluxLaw(2, 2, 1, 1), 3) == [FluxLaw(2, 2, 1, 1)]


def test_linear_problem_converges_in_one_step():
    system = _dirichlet_system()
    trace = NewtonTrace()
    u, res = newton(system, FluxLaw(2, 2, 1, 1), np.zeros(system.nfree), SolverConfig(forcing=1e-14),
                    1e-10, trace)
    assert res < 1e-10
    assert trace.iterations <= 2


def test_energy_decreases_monotonically():
    system = _dirichlet_system(16)
    trace = NewtonTrace()
    law = FluxLaw(4, 4, 1, 1)
    u, res = solve_with_continuation(system, law, SolverConfig(), trace=trace)
    assert res <= 1e-10
    e = np.array(trace.energies)
    assert np.all(np.diff(e) <= 1e-14 * np.abs(e[:-1]))


def test_nonconvergence_carries_best_iterate():
    system = _dirichlet_system(16)
    with pytest.raises(NonConvergence) as info:
        newton(system, FluxLaw(5, 5, 1, 1), np.zeros(system.nfree), SolverConfig(max_iter=1), 1e-12)
    assert info.value.best is not None and info.value.best.shape == (system.nfree,)
    assert info.value.residual > 1e-12


def test_direct_and_iterative_agree():
    system = _dirichlet_system(12)
    law = FluxLaw(3, 3, 2, 2)
    u1, _ = solve_with_continuation(system, law, SolverConfig())
    u2, _ = solve_with_continuation(system, law, SolverConfig(), direct=True)
    np.testing.assert_allclose(u1, u2, atol=1e-9)
