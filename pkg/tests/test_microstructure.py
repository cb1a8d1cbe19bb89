import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from powerhom.grid import PeriodicGrid
from powerhom.microstructure import (Microstructure, cell_phases, indicator, rescaled_indicator,
                                     volume_fractions)

LAYERED = Microstructure.layered(0.25, 0.75, axis=1)
DISPERSED = Microstructure.dispersed((0.5, 0.5), 0.25)


def test_indicator_examples():
    assert indicator(LAYERED, [0.1, 0.5]) == 1
    assert indicator(DISPERSED, [0.5, 0.9]) == 2
    assert indicator(LAYERED, [0.3, 1.5]) == 1  # periodic wrap
    assert indicator(Microstructure.homogeneous(), [0.7, 0.2]) == 1


def test_layer_boundaries_closed_below_open_above():
    assert indicator(LAYERED, [0.0, 0.25]) == 1
    assert indicator(LAYERED, [0.0, 0.75]) == 2
    assert indicator(DISPERSED, [0.75, 0.5]) == 2  # on the circle: outside


def test_rescaled_indicator_examples():
    assert rescaled_indicator(LAYERED, 0.5, [0.1, 0.25]) == 1
    assert rescaled_indicator(DISPERSED, 0.25, [0.125, 0.125]) == 1
    pts = np.random.default_rng(0).uniform(-3, 3, size=(50, 2))
    np.testing.assert_array_equal(rescaled_indicator(DISPERSED, 1.0, pts), indicator(DISPERSED, pts))
    with pytest.raises(ValueError):
        rescaled_indicator(LAYERED, 0.0, [0.1, 0.1])


def test_volume_fractions():
    for n in (4, 8, 64):
        assert volume_fractions(LAYERED, PeriodicGrid(n)) == (0.5, 0.5)
    assert volume_fractions(Microstructure.homogeneous(), PeriodicGrid(8)) == (1.0, 0.0)
    t1, t2 = volume_fractions(DISPERSED, PeriodicGrid(256))
    assert abs(t1 - np.pi / 16) < 2 / 256
    assert t1 + t2 == 1.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_phases_partition(y0, y1):
    for m in (LAYERED, DISPERSED):
        ph = indicator(m, [y0, y1])
        assert ph in (1, 2)
        # periodicity
        assert indicator(m, [y0 + 1.0, y1 - 2.0]) == ph or abs((y0 % 1) - 1) < 1e-9 or abs((y1 % 1) - 1) < 1e-9


def test_cell_phases_eps_tiling():
    g = PeriodicGrid(16)
    coarse = cell_phases(LAYERED, g).reshape(16, 16)
    fine = cell_phases(LAYERED, g, eps=0.5).reshape(16, 16)
    np.testing.assert_array_equal(fine[:, :8], coarse[:, ::2])


@pytest.mark.parametrize("kwargs", [dict(a=0.5, b=0.5), dict(a=-0.1, b=0.5), dict(a=0.2, b=1.0)])
def test_invalid_layers(kwargs):
    with pytest.raises(ValueError):
        Microstructure.layered(**kwargs)


def test_invalid_inclusions():
    with pytest.raises(ValueError):
        Microstructure.dispersed((0.5, 0.5), 0.5)  # touches the cell boundary
    with pytest.raises(ValueError):
        Microstructure.dispersed((0.5, 0.5), 0.0)
    with pytest.raises(ValueError):
        Microstructure("spiral")
