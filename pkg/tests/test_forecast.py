from dataclasses import replace

import numpy as np
import pytest

from WindESN.errors import ConfigurationError, InsufficientDataError, SchemaError
from WindESN.esn import train_esn
from WindESN.forecast import DEFAULT_LEVELS, calibrate, coverage, coverage_table, \
    evaluation_window, forecast_ensemble, forecast_knots, horizon_mse, \
    interval_probabilities, mse, rolling_forecasts, run_ensemble, target_grid, train_ensemble
from WindESN.spatial import KrigingWeights


def test_evaluation_window_bounds():
    assert evaluation_window(10, 15, 1) == [11, 12, 13, 14, 15]
    assert evaluation_window(10, 15, 3) == [13, 14, 15]
    with pytest.raises(ConfigurationError):
        evaluation_window(15, 15, 1)


def test_target_grid_layout():
    def rolling(series, first, last, horizons):
        origins = np.arange(first, last + 1, dtype=float)[:, None]
        return {h: origins + h for h in horizons}

    series = np.zeros((21, 1))
    grid = target_grid(rolling, series, T=14, horizons=(1, 2, 3))
    assert grid.shape == (3, 6, 1)
    targets = np.arange(15, 21, dtype=float)
    for k, h in enumerate((1, 2, 3)):
        assert np.all(np.isnan(grid[k, :h - 1]))
        np.testing.assert_array_equal(grid[k, h - 1:, 0], targets[h - 1:])


@pytest.mark.parametrize("n_lags", [1, 2], ids=["one-lag", "two-lags"])
def test_single_origin_matches_rolling(ar_series, small_spec, n_lags):
    model = train_esn(replace(small_spec, n_lags=n_lags), ar_series[:300])
    origin = 349
    single = forecast_knots(model, ar_series[:origin + 1], horizons=(1, 2, 3))
    rolled = rolling_forecasts(model, ar_series, origin - 5, origin, horizons=(1, 2, 3))
    for h in (1, 2, 3):
        np.testing.assert_allclose(single[h], rolled[h][-1], atol=1e-10)


def test_one_step_forecasts_beat_climatology(ar_series, small_spec):
    ensemble = run_ensemble(small_spec, 3, ar_series[:300], ar_series[300:], start=0)
    truth = ar_series[300:]
    assert ensemble.mean.shape == (3, 100, 3)
    np.testing.assert_array_equal(ensemble.times, np.arange(300, 400))
    errors = horizon_mse(truth, ensemble.mean)
    assert errors[0] < 0.8 * mse(truth, np.zeros_like(truth))
    assert errors[0] < errors[2]


def test_pretrained_members_match_run_ensemble(ar_series, small_spec):
    train, evaluation = ar_series[:300], ar_series[300:]
    direct = run_ensemble(small_spec, 3, train, evaluation, start=50)
    models = train_ensemble(small_spec, 3, train)
    assert [m.spec.seed for m in models] == [3, 4, 5]

    staged = forecast_ensemble(models, train, evaluation, start=50)
    assert staged.seeds == direct.seeds
    np.testing.assert_array_equal(staged.times, direct.times)
    np.testing.assert_array_equal(staged.mean, direct.mean)
    with pytest.raises(ConfigurationError, match="distinct seeds"):
        forecast_ensemble(models + models[:1], train, evaluation)


def test_streaming_mean_matches_kept_members(ar_series, small_spec):
    kept = run_ensemble(small_spec, 2, ar_series[:300], ar_series[300:])
    streamed = run_ensemble(small_spec, 2, ar_series[:300], ar_series[300:],
                            keep_members=False)
    assert streamed.members is None
    assert kept.members.shape == (2, 3, 100, 3)
    np.testing.assert_allclose(streamed.mean, kept.mean, atol=1e-12)


def test_reconstruct_applies_kriging_weights(ar_series, small_spec):
    ensemble = run_ensemble(small_spec, 1, ar_series[:300], ar_series[300:])
    weights = KrigingWeights(matrix=np.array([[1.0, 0, 0], [0.5, 0.5, 0],
                                              [0, 0, 1.0], [0, 1.0, 0]]))
    full = ensemble.reconstruct(weights).reconstructed
    assert full.shape == (3, 100, 4)
    np.testing.assert_allclose(full[..., 1], 0.5 * (ensemble.mean[..., 0]
                                                    + ensemble.mean[..., 1]))


def test_interval_probabilities():
    assert interval_probabilities((0.95, 0.8)) == (0.025, 0.1, 0.9, 0.975)
    with pytest.raises(ConfigurationError):
        interval_probabilities((1.0,))


def test_calibrated_intervals_reach_nominal_coverage(rng):
    probs = interval_probabilities(DEFAULT_LEVELS)
    forecasts = np.zeros((3, 10_000, 20))
    calib = calibrate(rng.standard_normal((10_000, 20)), forecasts, probs)
    assert np.all(np.diff(calib.quantiles, axis=-1) >= 0)

    fresh = rng.standard_normal((10_000, 20))
    for level, tol in zip(DEFAULT_LEVELS, (0.02, 0.03, 0.03)):
        result = coverage(fresh, forecasts, calib, level)
        assert np.all(np.abs(result.mean - level) < tol)


def test_calibration_needs_enough_samples(rng):
    forecasts = np.zeros((3, 20, 2))
    with pytest.raises(InsufficientDataError, match="40 are needed"):
        calibrate(rng.standard_normal((20, 2)), forecasts, (0.025, 0.975))


def test_calibration_skips_unissued_targets(rng):
    forecasts = np.zeros((3, 50, 2))
    forecasts[1, 0] = np.nan
    forecasts[2, :2] = np.nan
    calib = calibrate(rng.standard_normal((50, 2)), forecasts, (0.1, 0.9))
    assert np.all(np.isfinite(calib.quantiles))
    with pytest.raises(ConfigurationError, match="not calibrated"):
        calib.quantile(0.5)


def test_coverage_table_format(rng):
    forecasts = np.zeros((3, 200, 4))
    calib = calibrate(rng.standard_normal((200, 4)), forecasts,
                      interval_probabilities(DEFAULT_LEVELS))
    table = coverage_table(rng.standard_normal((200, 4)), forecasts, calib)
    assert list(table.columns) == ["interval", "h1", "h2", "h3"]
    assert list(table["interval"]) == ["95%", "80%", "60%"]
    assert table["h1"].str.fullmatch(r"\d+\.\d% \(\d+\.\d%\)").all()


def test_mse_ignores_missing_pairs():
    truth = np.array([[1.0, 2.0], [3.0, 4.0]])
    forecasts = np.array([[1.0, np.nan], [1.0, 4.0]])
    assert mse(truth, forecasts) == pytest.approx(4.0 / 3.0)
    assert np.isnan(mse(truth, np.full_like(truth, np.nan)))
    with pytest.raises(SchemaError):
        mse(truth, np.zeros((3, 3)))
