import math

import numpy as np
import pytest

from analysis import inference
from analysis.bandwidth import (
    PRESETS,
    build_grid,
    grid_from_preset,
    select_bandwidth,
    select_index,
    turning_point_curves,
    window_standard_errors,
)
from analysis.estimator import Bandwidths, estimate_msq
from errors import ConfigError


def test_grid_rates():
    grid = build_grid(200, 3, (0.75, 0.875, 1.0), (72.5, 75.0, 77.5))
    h_rate = 200 ** (-1.0 / 22.0)
    kappa_rate = 200 ** (1.0 / 11.0)
    assert grid.entries[1] == pytest.approx((0.875 * h_rate, 75.0 * kappa_rate))
    assert len(grid) == 3


@pytest.mark.parametrize("a_list, c_list", [
    ((1.0, 1.0), (1.0, 1.0)),
    ((1.0, 1.0, 1.0), (1.0, 1.0)),
    ((1.0, 0.0, 1.0), (1.0, 1.0, 1.0)),
])
def test_grid_validation(a_list, c_list):
    with pytest.raises(ConfigError):
        build_grid(100, 3, a_list, c_list)


def test_presets():
    grid = grid_from_preset("model2-p5", 500)
    assert grid.p == 5
    assert grid.c_list == PRESETS["model2-p5"].c_list
    with pytest.raises(ConfigError):
        grid_from_preset("model1-p3", 500, p=5)
    with pytest.raises(ConfigError):
        grid_from_preset("unknown", 500)


def test_window_standard_errors():
    values = [1.0, 2.0, 4.0, 4.0, 4.0]
    se = window_standard_errors(values)
    assert len(se) == 3
    assert se[0] == pytest.approx(np.std([1.0, 2.0, 4.0], ddof=1) / math.sqrt(3))
    assert se[2] == 0.0


def test_select_index_picks_flattest_window():
    assert select_index([1.0, 2.0, 4.0, 4.0, 4.0]) == 3
    # ties resolve to the first window
    assert select_index([3.0, 3.0, 3.0, 3.0, 3.0]) == 1


def test_select_index_short_grid():
    with pytest.raises(ConfigError):
        select_index([1.0, 2.0])


def test_select_bandwidth(model1_polar):
    grid = build_grid(model1_polar.n, 3, (0.75, 0.8125, 0.875, 0.9375, 1.0), (20.0, 22.5, 25.0, 27.5, 30.0))
    selection = select_bandwidth(model1_polar, grid)
    assert 1 <= selection.index <= len(grid) - 2
    assert (selection.bandwidths.h, selection.bandwidths.kappa) == pytest.approx(grid.entries[selection.index])
    assert selection.index == select_index(selection.vhats)
    h, kappa = grid.entries[2]
    direct = estimate_msq(model1_polar, Bandwidths(h=h, kappa=kappa))
    assert selection.vhats[2] == pytest.approx(inference.vhat(direct))
    assert selection.as_dict()["index"] == selection.index


def test_select_bandwidth_threads_agree(model1_polar):
    grid = build_grid(model1_polar.n, 3, (0.75, 0.875, 1.0, 1.125), (20.0, 25.0, 30.0, 35.0))
    one = select_bandwidth(model1_polar, grid, threads=1)
    many = select_bandwidth(model1_polar, grid, threads=3)
    assert one.index == many.index
    assert one.vhats == many.vhats


def test_select_bandwidth_bias_reduced(model1_polar):
    grid = build_grid(model1_polar.n, 3, (0.75, 0.875, 1.0), (20.0, 25.0, 30.0))
    selection = select_bandwidth(model1_polar, grid, bias_reduction_a=0.5)
    assert selection.index == 1
    assert selection.estimate.bias_reduced
    assert selection.pairs.kappas == (grid.entries[1][1], 0.5 * grid.entries[1][1])


def test_grid_dimension_mismatch(model1_polar):
    with pytest.raises(ConfigError):
        select_bandwidth(model1_polar, grid_from_preset("model2-p5", model1_polar.n))


def test_turning_point_curves(model1_polar):
    grid = build_grid(model1_polar.n, 3, (0.75, 0.875, 1.0), (20.0, 25.0, 30.0))
    curves = turning_point_curves(model1_polar, grid)
    assert set(curves) == {"h", "kappa"}
    for name, frame in curves.items():
        assert list(frame.columns) == ["h", "kappa", "msq", "vhat"]
        assert len(frame) == 3
        assert frame[name].is_monotonic_increasing
    assert curves["h"]["kappa"].nunique() == 1
