import numpy as np
import pytest

from oracles import LAMINATE_T_123, laminate_normal_flux
from powerhom.cache import CellCache
from powerhom.cell import (CellEvaluator, check_b_continuity, check_b_monotone, energy_identity,
                           homogenized_flux, solve_cell, solve_dual_layer)
from powerhom.constitutive import FluxLaw
from powerhom.errors import NonConvergence, WrongMicrostructure
from powerhom.grid import PeriodicGrid
from powerhom.microstructure import Microstructure
from powerhom.solver import SolverConfig

LAW = FluxLaw(2, 3, 1, 2)
LAYERED = Microstructure.layered(0.25, 0.75)
DISPERSED = Microstructure.dispersed((0.5, 0.5), 0.25)
HOMOG = Microstructure.homogeneous()
G16 = PeriodicGrid(16)


@pytest.mark.parametrize("xi", [(1.0, 0.0), (0.3, -1.7), (2.0, 2.0)])
def test_homogeneous_cell_is_trivial(xi):
    law = FluxLaw(3, 3, 2, 2)
    sol = solve_cell(law, HOMOG, xi, G16)
    assert np.abs(sol.upsilon.values).max() < 1e-12
    x = np.array(xi)
    np.testing.assert_allclose(sol.b, 2 * np.linalg.norm(x) * x, rtol=1e-12)
    assert energy_identity(sol) < 1e-12


@pytest.mark.parametrize("micro", [LAYERED, DISPERSED])
def test_zero_gradient(micro):
    sol = solve_cell(LAW, micro, (0.0, 0.0), G16)
    assert np.all(sol.upsilon.values == 0) and np.all(sol.b == 0)
    assert energy_identity(sol) == 0


def test_layered_parallel_load_is_arithmetic_mixture():
    sol = solve_cell(LAW, LAYERED, (1.0, 0.0), G16)
    assert np.abs(sol.upsilon.values).max() < 1e-10
    np.testing.assert_allclose(sol.b, [0.5 * 1 + 0.5 * 2, 0.0], atol=1e-10)


def test_layered_normal_load_matches_laminate_root():
    t, g1, g2 = laminate_normal_flux(2, 3, 1, 1, 0.5)
    assert t == pytest.approx(1.0, abs=1e-12)
    sol = solve_cell(FluxLaw(2, 3, 1, 1), LAYERED, (0.0, 1.0), G16)
    assert sol.b[1] == pytest.approx(t, abs=1e-8)
    t, g1, g2 = laminate_normal_flux(2, 3, 1, 2, 0.5)
    assert t == pytest.approx(LAMINATE_T_123, abs=1e-12)
    sol = solve_cell(LAW, LAYERED, (0.0, 1.0), G16)
    assert sol.b[1] == pytest.approx(t, abs=1e-8)
    assert abs(sol.b[0]) < 1e-10
    # piecewise-constant layer gradients
    p = sol.p_field.flat()
    np.testing.assert_allclose(p[sol.phases == 1, 1], g1, atol=1e-8)
    np.testing.assert_allclose(p[sol.phases == 2, 1], g2, atol=1e-8)


def test_linear_laminate():
    law = FluxLaw(2, 2, 1, 2)
    ev = CellEvaluator(law, LAYERED, G16)
    np.testing.assert_allclose(ev.b((1.0, 0.0)), [1.5, 0.0], atol=1e-9)
    np.testing.assert_allclose(ev.b((0.0, 1.0)), [0.0, 4.0 / 3.0], atol=1e-9)


@pytest.mark.parametrize("micro", [LAYERED, DISPERSED])
@pytest.mark.parametrize("xi", [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (-0.6, 1.25)])
def test_cell_identities(micro, xi):
    sol = solve_cell(LAW, micro, xi, G16)
    np.testing.assert_allclose(sol.p_field.flat().mean(axis=0), xi, atol=1e-12)
    assert energy_identity(sol) < 1e-8
    np.testing.assert_allclose(homogenized_flux(sol), sol.b, rtol=1e-14)
    neg = solve_cell(LAW, micro, tuple(-v for v in xi), G16)
    np.testing.assert_allclose(neg.b, -sol.b, atol=1e-10)


def test_three_dimensional_layered_cell():
    grid = PeriodicGrid(4, dim=3)
    micro = Microstructure.layered(0.25, 0.75, axis=2)
    sol = solve_cell(LAW, micro, (1.0, 0.5, 0.0), grid)
    np.testing.assert_allclose(sol.p_field.flat().mean(axis=0), sol.xi, atol=1e-12)
    # tangential load: arithmetic mixture of the two laws
    x = np.array([1.0, 0.5, 0.0])
    n = np.linalg.norm(x)
    np.testing.assert_allclose(sol.b, 0.5 * x + 0.5 * 2 * n * x, atol=1e-9)
    sol = solve_cell(LAW, micro, (0.0, 0.0, 1.0), grid)
    assert sol.b[2] == pytest.approx(LAMINATE_T_123, abs=1e-8)


def test_evaluator_cache_is_bit_identical(tmp_path):
    cache = CellCache(tmp_path / "cells.bin")
    ev = CellEvaluator(LAW, DISPERSED, G16, cache=cache)
    cold = ev((0.7, -0.2))
    warm_cache = CellCache(tmp_path / "cells.bin")
    warm = CellEvaluator(LAW, DISPERSED, G16, cache=warm_cache)((0.7 + 1e-15, -0.2))
    assert warm_cache.stats()["hits"] == 1
    assert np.array_equal(cold.b, warm.b)
    assert np.array_equal(cold.p_field.values, warm.p_field.values)


def test_evaluator_threads_keep_order():
    xis = [(t, 1 - t) for t in np.linspace(-1, 1, 7)]
    serial = CellEvaluator(LAW, DISPERSED, PeriodicGrid(8)).many(xis)
    threaded = CellEvaluator(LAW, DISPERSED, PeriodicGrid(8), threads=3).many(xis)
    for a, b in zip(serial, threaded):
        assert np.array_equal(a.b, b.b)


def test_nonconvergence_reports_xi():
    cfg = SolverConfig(max_iter=1, continuation=0, tol=1e-14)
    with pytest.raises(NonConvergence) as info:
        solve_cell(FluxLaw(4, 6, 1, 5), DISPERSED, (3.0, -2.0), G16, cfg)
    np.testing.assert_array_equal(info.value.xi, [3.0, -2.0])


def test_b_monotone_checks():
    rep = check_b_monotone(CellEvaluator(FluxLaw(2, 2, 1, 1), HOMOG, PeriodicGrid(8)),
                           [((1, 0), (0, 1)), ((1, 1), (1, 1))])
    assert rep.passed
    assert rep.rows[0][2] == pytest.approx(rep.rows[0][3])  # equality for the linear identity law
    ev = CellEvaluator(LAW, LAYERED, G16)
    pts = [(1, 0), (0, 1), (2, 0), (0, -1)]
    pairs = [(a, b) for i, a in enumerate(pts) for b in pts[i + 1:]]
    rep = check_b_monotone(ev, pairs)
    assert rep.passed and rep.extreme >= 0


def test_b_continuity_checks():
    ev = CellEvaluator(FluxLaw(2, 2, 3, 3), HOMOG, PeriodicGrid(8))
    rep = check_b_continuity(ev, [((1, 0), (1, 0))], line=((1.0, 0.0), (0.0, 1.0)))
    assert rep.passed and rep.rows[0][2] == 0
    assert rep.extra["slope"] == pytest.approx(1.0, abs=1e-6)
    ev = CellEvaluator(LAW, LAYERED, G16)
    rep = check_b_continuity(ev, [((1, 0), (0, 1))], line=((0.0, 1.0), (0.0, 1.0)))
    assert rep.passed and rep.extra["slope"] >= 0.45


def test_dual_layer_rejects_other_geometries():
    with pytest.raises(WrongMicrostructure):
        solve_dual_layer(LAW, DISPERSED, (0, 1), G16)


def test_dual_layer_zero_and_parallel():
    d = solve_dual_layer(LAW, LAYERED, (0.0, 0.0), G16)
    assert np.all(d.tau.values == 0)
    phases = solve_cell(LAW, LAYERED, (0.0, 0.0), G16).phases
    d = solve_dual_layer(LAW, LAYERED, (1.0, 0.0), G16)
    tau = d.tau.flat()
    np.testing.assert_array_equal(tau[phases == 1], np.tile([-1.0, 0.0], (int((phases == 1).sum()), 1)))
    assert np.abs(tau[phases == 2]).max() < 1e-12
    assert d.divergence_residual < 1e-12


@pytest.mark.parametrize("p2", [2.0, 3.0])
def test_dual_layer_normal_load(p2):
    law = FluxLaw(2, p2, 1, 1)
    d = solve_dual_layer(law, LAYERED, (0.0, 1.0), G16)
    # phi decreases with unit slope across the (periodically connected) phase-2 strip
    np.testing.assert_allclose(d.tau.flat(), np.tile([0.0, -1.0], (256, 1)), atol=1e-8)
    assert d.divergence_residual < 1e-8
    assert d.q1_ratio == pytest.approx(1.0, abs=1e-8)
    y = G16.node_coordinates()[..., 1]
    unwrapped = np.where(y < 0.5, y + 1.0, y)
    phi = d.phi.values
    ok = ~np.isnan(phi)
    resid = phi[ok] + unwrapped[ok]
    assert np.ptp(resid) < 1e-8
