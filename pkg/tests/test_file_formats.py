import json

import numpy as np
import pytest

from WindESN.errors import InvalidDataError, SchemaError
from WindESN.esn import train_esn
from WindESN.field_model import fit_harmonics
from WindESN.file_formats import load_calibration, load_forecast, load_harmonics, load_models, \
    read_covariance, read_field, read_knots, save_calibration, save_forecast, save_harmonics, \
    save_models, write_covariance, write_field, write_knots
from WindESN.forecast import calibrate, run_ensemble
from WindESN.manifest import manifest_path, write_manifest
from WindESN.spatial import GRID_KNOT, HIGH_WIND_KNOT, CovarianceModel, KnotSet, \
    MixtureComponent


@pytest.mark.parametrize("suffix", [".wsf", ".csv"], ids=["binary", "text"])
def test_field_files_preserve_values(wind_field, tmp_path, suffix):
    path = write_field(tmp_path / f"field{suffix}", wind_field.subset_times(24, 71))
    back = read_field(path)
    assert back.location_ids == wind_field.location_ids
    assert back.start == 24
    assert back.units == "m/s"
    np.testing.assert_array_equal(back.coords, wind_field.coords)
    np.testing.assert_array_equal(back.values, wind_field.values[24:72])


@pytest.mark.parametrize("suffix", [".wsf", ".csv"], ids=["binary", "text"])
def test_missing_values_use_the_sentinel(wind_field, tmp_path, suffix):
    values = wind_field.values.copy()
    values[3, 5] = np.nan
    gappy = wind_field.with_values(values)
    with pytest.raises(InvalidDataError):
        write_field(tmp_path / f"gappy{suffix}", gappy)

    back = read_field(write_field(tmp_path / f"gappy{suffix}", gappy, missing=-9999.0))
    assert np.isnan(back.values[3, 5])
    assert np.isnan(back.values).sum() == 1


def test_binary_layout(wind_field, tmp_path):
    path = write_field(tmp_path / "f.wsf", wind_field)
    raw = path.read_bytes()
    assert raw[:8] == b"WINDSTF1"
    assert raw[-8:] == np.float64(wind_field.values[-1, -1]).astype("<f8").tobytes()
    (tmp_path / "bad.wsf").write_bytes(b"NOTAFIELD" + raw[9:])
    with pytest.raises(SchemaError):
        read_field(tmp_path / "bad.wsf")


def test_harmonics_file(wind_field, tmp_path):
    model = fit_harmonics(wind_field, periods=(24.0, 12.0))
    back = load_harmonics(save_harmonics(tmp_path / "h.npz", model))
    assert back.periods == (24.0, 12.0)
    assert back.location_ids == model.location_ids
    np.testing.assert_array_equal(back.coefficients, model.coefficients)
    np.testing.assert_array_equal(back.scale, model.scale)


def test_knots_file_checks_locations(wind_field, tmp_path):
    knots = KnotSet(indices=(0, 7, 20), tags=(GRID_KNOT, HIGH_WIND_KNOT, GRID_KNOT))
    path = write_knots(tmp_path / "knots.csv", knots, wind_field)
    assert read_knots(path, wind_field) == knots
    other = wind_field.subset_locations([1, 0] + list(range(2, 36)))
    with pytest.raises(SchemaError, match="does not match"):
        read_knots(path, other)


def test_covariance_file(tmp_path):
    model = CovarianceModel(
        (MixtureComponent((1.0, 2.0), 1.5, 0.7, np.array([[0.3, 0.1], [0.1, 0.2]]), 0.05),),
        bandwidth=2.0,
    )
    back = read_covariance(write_covariance(tmp_path / "cov.yaml", model))
    assert back.bandwidth == 2.0
    np.testing.assert_array_equal(back.components[0].kernel, model.components[0].kernel)
    assert back.components[0].nugget == 0.05


@pytest.mark.parametrize("store", [False, True], ids=["regenerated", "stored"])
def test_models_reload_with_identical_forecasts(ar_series, small_spec, tmp_path, store):
    models = [train_esn(small_spec.with_seed(s), ar_series[:300]) for s in (3, 4)]
    back = load_models(save_models(tmp_path / "models.npz", models, store_matrices=store))
    assert [m.spec for m in back] == [m.spec for m in models]
    for a, b in zip(models, back):
        states = a.states(ar_series)
        np.testing.assert_array_equal(b.states(ar_series), states)
        np.testing.assert_array_equal(b.predict_states(states), a.predict_states(states))


def test_forecast_and_calibration_files(ar_series, small_spec, tmp_path, rng):
    ensemble = run_ensemble(small_spec, 2, ar_series[:300], ar_series[300:])
    ens, ids = load_forecast(save_forecast(tmp_path / "f.npz", ensemble, ("a", "b", "c")))
    assert ids == ("a", "b", "c")
    assert ens.horizons == ensemble.horizons
    np.testing.assert_array_equal(ens.mean, ensemble.mean)
    np.testing.assert_array_equal(ens.members, ensemble.members)

    calib = calibrate(rng.standard_normal((100, 3)), np.zeros((3, 100, 3)), (0.1, 0.9))
    back, _ = load_calibration(save_calibration(tmp_path / "c.npz", calib))
    np.testing.assert_array_equal(back.quantiles, calib.quantiles)
    with pytest.raises(SchemaError, match="expected 'wind-esn-forecast'"):
        load_forecast(tmp_path / "c.npz")


def test_npz_files_are_byte_reproducible(wind_field, tmp_path):
    model = fit_harmonics(wind_field, periods=(24.0,))
    a = save_harmonics(tmp_path / "a.npz", model).read_bytes()
    b = save_harmonics(tmp_path / "b.npz", model).read_bytes()
    assert a == b


def test_manifest_records_inputs(tmp_path):
    source = tmp_path / "in.txt"
    source.write_text("data", encoding="utf-8")
    out = tmp_path / "result.csv"
    path = write_manifest(out, "evaluate", {"window": "test", "forecast": [out]}, "abc", 7,
                          [source, tmp_path / "absent.txt"])
    assert path == manifest_path(out) == tmp_path / "result.manifest.json"

    manifest = json.loads(path.read_text(encoding="utf-8"))
    assert manifest["command"] == "evaluate"
    assert manifest["seed"] == 7
    assert manifest["args"]["forecast"] == [str(out)]
    assert manifest["inputs"][str(source)]["sha256"] == (
        "3a6eb0790f39ac87c94f3856b2dd2c5d110e6811602261a9a923d3bb23adc8b7")
    assert manifest["inputs"][str(tmp_path / "absent.txt")]["missing"] is True
    assert set(manifest["tool_versions"]) == {"python", "platform", "numpy", "scipy", "pandas",
                                              "yaml", "tqdm"}
    assert manifest["tool_versions"]["numpy"] == np.__version__
    assert manifest["generated_at_utc"].endswith("Z")
