import numpy as np
import pytest

from WindESN.baselines import ArimaModel, VarModel, eof_esn, eof_project, eof_reconstruct, \
    fit_arima, fit_arima_sites, fit_eof, fit_var, forecast_arima, forecast_var, persistence, \
    rolling_arima, rolling_arima_sites, rolling_persistence, rolling_var, select_arima_order, \
    select_var_order
from WindESN.errors import ConfigurationError, InsufficientDataError, SchemaError


def test_random_walk_arima_is_persistence(ar_series):
    y = np.cumsum(ar_series[:, 0])
    model = fit_arima(y, 0, 1, 0)
    assert model.constant == 0.0

    arima = rolling_arima(model, y, 10, 398, horizons=(1, 2, 3))
    naive = rolling_persistence(y[:, None], 10, 398, horizons=(1, 2, 3))
    for h in (1, 2, 3):
        np.testing.assert_allclose(arima[h], naive[h][:, 0], atol=1e-12)
    np.testing.assert_array_equal(persistence(y[:50]), np.full((3, 1), y[49]))


def test_diagonal_var_is_per_site_ar(ar_series):
    var = VarModel(intercept=np.array([0.2, -0.1]), coefs=np.diag([0.6, -0.3])[None])
    sites = [ArimaModel((1, 0, 0), 0.2, np.array([0.6]), np.zeros(0), 1.0),
             ArimaModel((1, 0, 0), -0.1, np.array([-0.3]), np.zeros(0), 1.0)]
    series = ar_series[:, :2]

    joint = rolling_var(var, series, 0, 398)
    separate = rolling_arima_sites(sites, series, 0, 398)
    for h in (1, 2, 3):
        np.testing.assert_allclose(joint[h], separate[h], atol=1e-6)


def test_univariate_var_fit_matches_ar_fit(ar_series):
    y = ar_series[:, 0]
    var = fit_var(y, 1)
    ar = fit_arima(y, 1, 0, 0)
    assert var.coefs[0, 0, 0] == pytest.approx(ar.ar[0], abs=1e-6)
    assert var.intercept[0] == pytest.approx(ar.constant, abs=1e-6)
    assert ar.ar[0] == pytest.approx(0.7, abs=0.1)
    np.testing.assert_allclose(forecast_var(var, y[:, None])[:, 0], forecast_arima(ar, y),
                               atol=1e-6)


def test_arma_fit_is_causal_and_invertible(rng):
    e = rng.standard_normal(3000)
    y = np.zeros_like(e)
    for t in range(1, e.size):
        y[t] = 0.5 * y[t - 1] + e[t] + 0.4 * e[t - 1]
    model = fit_arima(y, 1, 0, 1)
    assert model.is_causal
    assert model.ar[0] == pytest.approx(0.5, abs=0.1)
    assert model.ma[0] == pytest.approx(0.4, abs=0.1)
    assert model.sigma2 == pytest.approx(1.0, abs=0.1)


def test_short_series_is_rejected():
    with pytest.raises(InsufficientDataError):
        fit_arima(np.arange(15.0), 1, 0, 1)
    with pytest.raises(ConfigurationError):
        fit_arima(np.arange(100.0), 1, 3, 0)


def test_order_selection_prefers_autoregression(ar_series):
    model, score = select_arima_order(ar_series[:300, 1], ar_series[300:, 1],
                                      orders=[(0, 0, 0), (1, 0, 0)])
    assert model.order == (1, 0, 0)
    assert np.isfinite(score)

    models = fit_arima_sites(ar_series[:300], ar_series[300:], orders=[(0, 0, 0), (1, 0, 0)])
    assert [m.order for m in models] == [(1, 0, 0)] * 3


def test_var_order_selection(ar_series):
    model, score = select_var_order(ar_series[:300], ar_series[300:], orders=(1, 2))
    assert model.order in (1, 2)
    assert model.coefs.shape[1:] == (3, 3)
    assert score < np.mean(ar_series[300:] ** 2)


def test_var_rejects_wrong_width(ar_series):
    model = fit_var(ar_series, 1)
    with pytest.raises(SchemaError):
        rolling_var(model, ar_series[:, :2], 0, 10)


@pytest.mark.parametrize("shape", [(50, 8), (6, 20)], ids=["tall", "wide"])
def test_full_rank_eof_round_trip(rng, shape):
    Y = rng.standard_normal(shape)
    basis = fit_eof(Y, min(shape))
    np.testing.assert_allclose(basis.eofs @ basis.eofs.T, np.eye(min(shape)), atol=1e-8)
    np.testing.assert_allclose(eof_reconstruct(eof_project(Y, basis), basis), Y, atol=1e-8)
    assert np.all(np.diff(basis.eigenvalues) <= 0)
    assert basis.variance_fraction().sum() == pytest.approx(1.0)


def test_eof_count_is_bounded(rng):
    with pytest.raises(ConfigurationError):
        fit_eof(rng.standard_normal((10, 4)), 5)


def test_eof_esn_reconstructs_every_location(wind_field, small_spec):
    residuals = wind_field.values - wind_field.values.mean(axis=0)
    ensemble, basis = eof_esn(small_spec, 2, residuals[:400], residuals[400:], n_eof=4)
    assert basis.n_eof == 4
    assert ensemble.mean.shape == (3, 80, 4)
    assert ensemble.reconstructed.shape == (3, 80, 36)


def test_ar1_forecast_halves_each_step():
    model = ArimaModel((1, 0, 0), 0.0, np.array([0.5]), np.zeros(0), 1.0)
    np.testing.assert_allclose(forecast_arima(model, [0.7, 2.0]), [1.0, 0.5, 0.25], atol=1e-12)


def test_white_noise_arima_forecasts_the_mean(rng):
    y = 3.0 + rng.standard_normal(60)
    model = fit_arima(y, 0, 0, 0)
    assert model.constant == pytest.approx(y.mean())
    np.testing.assert_allclose(forecast_arima(model, y), np.full(3, y.mean()), atol=1e-12)


def test_var_without_dynamics_forecasts_the_intercept(ar_series):
    model = VarModel(intercept=np.array([1.0, -2.0, 0.5]), coefs=np.zeros((1, 3, 3)))
    np.testing.assert_allclose(forecast_var(model, ar_series),
                               np.tile([1.0, -2.0, 0.5], (3, 1)), atol=1e-12)


def test_var_least_squares_is_consistent(rng):
    A = np.array([[0.5, 0.2], [-0.3, 0.4]])
    y = np.zeros((5000, 2))
    e = rng.standard_normal(y.shape)
    for t in range(1, 5000):
        y[t] = A @ y[t - 1] + e[t]
    model = fit_var(y, 1)
    assert np.max(np.abs(model.coefs[0] - A)) < 0.05
    assert np.max(np.abs(model.intercept)) < 0.1
