import pytest

from WindESN.cross_validation import WIND_FIELD_GRID, EsnGrid, cross_validate, subsample_grid
from WindESN.errors import ConfigurationError


def test_expand_varies_last_axis_fastest(small_spec):
    grid = EsnGrid.from_mapping({"n_h": [10, 20], "lambda": [0.1, 0.2]})
    specs = grid.expand(small_spec)
    assert [(s.reservoir_size, s.ridge) for s in specs] == [
        (10, 0.1), (10, 0.2), (20, 0.1), (20, 0.2)]
    assert all(s.leak_rate == small_spec.leak_rate for s in specs)


def test_grid_mapping_accepts_scalars_and_field_names():
    grid = EsnGrid.from_mapping({"delta": 0.5, "ridge": [0.1, 0.3]})
    assert grid.spectral_scale == (0.5,)
    assert grid.to_mapping() == {"delta": [0.5], "lambda": [0.1, 0.3]}
    with pytest.raises(ConfigurationError, match="grid.gamma"):
        EsnGrid.from_mapping({"gamma": [1.0]})


def test_invalid_grid_point_is_named(small_spec):
    with pytest.raises(ConfigurationError, match="Grid point"):
        EsnGrid(leak_rate=(0.5, 1.5)).expand(small_spec)


def test_wind_field_grid_size(small_spec):
    sizes = [len(v) for v in WIND_FIELD_GRID.to_mapping().values()]
    assert sizes == [9, 10, 10, 40, 7, 5, 5, 5, 5]


def test_subsample_is_seeded_and_ordered(small_spec):
    specs = EsnGrid(ridge=tuple(0.01 * k for k in range(1, 21))).expand(small_spec)
    a = subsample_grid(specs, 5, seed=4)
    b = subsample_grid(specs, 5, seed=4)
    assert [i for i, _ in a] == [i for i, _ in b]
    assert [i for i, _ in a] == sorted(i for i, _ in a)
    assert len(subsample_grid(specs, None)) == 20
    with pytest.raises(ConfigurationError):
        subsample_grid(specs, 0)


def test_single_point_grid(ar_series, small_spec):
    result = cross_validate([small_spec], ar_series[:300], ar_series[300:], members=2)
    assert result.best == small_spec
    assert len(result.table) == 1
    assert result.best_mse == pytest.approx(result.table["mse_h1"].iloc[0])


def test_overwhelming_penalty_loses(ar_series, small_spec):
    specs = EsnGrid(ridge=(1e12, 0.1)).expand(small_spec)
    result = cross_validate(specs, ar_series[:300], ar_series[300:], members=2)
    assert result.best.ridge == 0.1
    assert list(result.table["grid_index"]) == [0, 1]
    assert result.table["mse_h1"].iloc[0] > result.table["mse_h1"].iloc[1]


def test_empty_grid_is_rejected(ar_series):
    with pytest.raises(ConfigurationError, match="empty"):
        cross_validate([], ar_series[:300], ar_series[300:])
