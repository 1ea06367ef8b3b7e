import numpy as np
import pytest

from WindESN.errors import DomainError, SchemaError, SingularDesignError, WindEsnWarning
from WindESN.field_model import SpaceTimeField, detrend, fit_harmonics, periodogram, retrend, \
    retrend_with_count, scaling_diagnostics


def _two_harmonic_field(n_times, noise_sd, rng, n_loc=2):
    t = np.arange(n_times)[:, None]
    b0 = np.array([8.0, 9.0])[:n_loc]
    cos24 = np.array([0.7, -0.4])[:n_loc]
    sin12 = np.array([0.3, 0.5])[:n_loc]
    root = b0 + cos24 * np.cos(2 * np.pi * t / 24.0) + sin12 * np.sin(2 * np.pi * t / 12.0)
    root = root + noise_sd * rng.standard_normal(root.shape)
    field = SpaceTimeField(location_ids=[f"L{i}" for i in range(n_loc)],
                           coords=np.column_stack([np.arange(n_loc), np.zeros(n_loc)]),
                           values=root ** 2)
    return field, b0, cos24, sin12


def test_noiseless_harmonics_are_recovered(rng):
    field, b0, cos24, sin12 = _two_harmonic_field(500, 0.0, rng)
    with pytest.warns(WindEsnWarning, match="fitted exactly"):
        model = fit_harmonics(field, periods=(24.0, 12.0))

    assert np.max(np.abs(model.intercept - b0)) < 1e-8
    assert np.max(np.abs(model.coefficients[:, 0, 0] - cos24)) < 1e-8
    assert np.max(np.abs(model.coefficients[:, 0, 1])) < 1e-8
    assert np.max(np.abs(model.coefficients[:, 1, 0])) < 1e-8
    assert np.max(np.abs(model.coefficients[:, 1, 1] - sin12)) < 1e-8
    np.testing.assert_array_equal(model.scale, [1.0, 1.0])


def test_noisy_harmonics_over_two_years(rng):
    field, b0, cos24, sin12 = _two_harmonic_field(17_520, 1.0, rng)
    model = fit_harmonics(field, periods=(24.0, 12.0))

    assert np.max(np.abs(model.intercept - b0)) < 0.05
    assert np.max(np.abs(model.coefficients[:, 0, 0] - cos24)) < 0.05
    assert np.max(np.abs(model.coefficients[:, 1, 1] - sin12)) < 0.05
    assert model.scale == pytest.approx([1.0, 1.0], abs=0.03)


def test_detrend_then_retrend_restores_field(wind_field):
    model = fit_harmonics(wind_field, periods=(24.0, 12.0))
    residuals = detrend(wind_field, model)

    assert residuals.values.std(axis=0, ddof=1) == pytest.approx(np.ones(36), rel=1e-9)
    np.testing.assert_allclose(retrend(residuals, model).values, wind_field.values, rtol=1e-10)


def test_retrend_truncates_negative_roots(wind_field):
    model = fit_harmonics(wind_field, periods=(24.0,))
    residuals = detrend(wind_field, model)
    pushed = residuals.with_values(np.full(residuals.values.shape, -1e6))

    with pytest.warns(WindEsnWarning, match="truncated"):
        out, truncated = retrend_with_count(pushed, model)
    assert truncated == pushed.values.size
    assert np.all(out.values == 0.0)


def test_negative_values_are_rejected(wind_field):
    bad = wind_field.with_values(wind_field.values - 100.0)
    with pytest.raises(DomainError):
        fit_harmonics(bad, periods=(24.0,))


def test_singular_period_is_named(wind_field):
    # sin(pi t) vanishes at integer hours
    with pytest.raises(SingularDesignError, match=r"periods\[1\]=2.0"):
        fit_harmonics(wind_field, periods=(24.0, 2.0))


@pytest.mark.parametrize("period", [480.0, 1e6], ids=["record-length", "far-beyond"])
def test_period_beyond_record_is_named(wind_field, period):
    assert wind_field.n_times == 480
    with pytest.raises(SingularDesignError, match=rf"periods\[1\]={period}"):
        fit_harmonics(wind_field, periods=(24.0, period))


def test_location_mismatch_is_a_schema_error(wind_field):
    model = fit_harmonics(wind_field, periods=(24.0,))
    with pytest.raises(SchemaError):
        detrend(wind_field.subset_locations(range(5)), model)


@pytest.mark.parametrize("period", [24.0, 12.0, 8.0], ids=["daily", "half-day", "eight-hour"])
def test_periodogram_peak_matches_period(period):
    t = np.arange(2400)
    spectrum = periodogram(np.cos(2 * np.pi * t / period))
    (peak_period, _), = spectrum.peaks(1)
    assert peak_period == pytest.approx(period)


def test_periodogram_preserves_energy(rng):
    x = rng.standard_normal(1001)
    spectrum = periodogram(x)
    assert np.sum(spectrum.amplitudes ** 2) == pytest.approx(np.sum((x - x.mean()) ** 2))


def test_subset_times_keeps_absolute_index(wind_field):
    sub = wind_field.subset_times(100, 199)
    assert sub.start == 100
    assert sub.n_times == 100
    np.testing.assert_array_equal(sub.values, wind_field.values[100:200])
    with pytest.raises(SchemaError):
        wind_field.subset_times(400, 600)


def test_scaling_diagnostics_summaries(wind_field):
    model = fit_harmonics(wind_field, periods=(24.0,))
    diag = scaling_diagnostics(detrend(wind_field, model), model, bins=20, qq_points=50)

    assert diag.histogram_counts.sum() == wind_field.values.size
    assert diag.histogram_edges.size == 21
    assert diag.qq_theoretical.shape == diag.qq_sample.shape == (50,)
    assert np.all(np.diff(diag.qq_sample) >= 0)
    np.testing.assert_array_equal(diag.scale, model.scale)
