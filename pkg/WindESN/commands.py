from __future__ import annotations

import argparse
from dataclasses import replace
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from WindESN.baselines import METHODS, arima_order_grid, eof_esn, fit_arima_sites, \
    rolling_arima_sites, rolling_persistence, rolling_var, select_var_order
from WindESN.config import SplitsConfig, dump_config, parse_config
from WindESN.cross_validation import cross_validate
from WindESN.errors import ConfigurationError, SchemaError
from WindESN.esn import EsnSpec
from WindESN.field_model import SpaceTimeField, detrend, fit_harmonics, periodogram, retrend, \
    scaling_diagnostics
from WindESN.file_formats import load_calibration, load_forecast, load_harmonics, load_models, \
    read_covariance, read_field, read_knots, save_calibration, save_forecast, save_harmonics, \
    save_models, write_covariance, write_field, write_knots
from WindESN.forecast import ForecastEnsemble, calibrate, coverage_table, forecast_ensemble, \
    interval_probabilities, mse, target_grid, train_ensemble
from WindESN.lorenz import run_study
from WindESN.power import TurbineSite, energy_cost, energy_error, load_turbine_sites, \
    quantile_energy_error, resolve_curve, site_power
from WindESN.spatial import KnotSet, cached_kriging_weights, default_centers, fit_covariance, \
    select_knots
from WindESN.synthetic import DemoSpec, demo_config, demo_turbines, generate_demo_field
from WindESN.wind_esn import COMMAND_REGISTRY, Command, IOCommand, register_command

WINDOWS = ("test", "validation", "evaluation", "all")


# ===================================================================
# Utility Functions
# ===================================================================

def _split_rows(field: SpaceTimeField, splits: SplitsConfig) -> Tuple[int, int, int]:
    """Row indices of the last training, last validation and last scored time."""
    if not splits.train_end:
        raise ConfigurationError("splits.train_end and splits.validation_end must be set.")
    last_time = field.end if splits.test_end is None else splits.test_end
    if not field.start < splits.train_end < splits.validation_end < last_time <= field.end:
        raise ConfigurationError(
            f"Splits {splits.train_end}/{splits.validation_end}/{last_time} do not fit the "
            f"field's time range [{field.start}, {field.end}]."
        )
    return (splits.train_end - field.start, splits.validation_end - field.start,
            last_time - field.start)


def _window_mask(times: np.ndarray, splits: SplitsConfig, window: str) -> np.ndarray:
    """Select target times of a named window; without splits every time is kept."""
    times = np.asarray(times)
    if window == "all" or not splits.train_end:
        return np.ones(times.shape, dtype=bool)
    last = np.inf if splits.test_end is None else splits.test_end
    if window == "validation":
        return (times > splits.train_end) & (times <= splits.validation_end)
    if window == "test":
        return (times > splits.validation_end) & (times <= last)
    if window == "evaluation":
        return (times > splits.train_end) & (times <= last)
    raise ConfigurationError(f"Unknown window '{window}'; choose from {WINDOWS}.")


def _knot_columns(knots: KnotSet) -> List[int]:
    return list(knots.indices)


def _forecast_target(ensemble: ForecastEnsemble, location_ids: Sequence[str],
                     truth: SpaceTimeField) -> Tuple[str, np.ndarray, List[int]]:
    """Forecast grid to score and the truth columns it lines up with.

    Reconstructed full-field forecasts take precedence over knot forecasts.
    """
    if ensemble.reconstructed is not None:
        if ensemble.reconstructed.shape[-1] != truth.n_locations:
            raise SchemaError(
                f"Reconstructed forecast has {ensemble.reconstructed.shape[-1]} locations, "
                f"truth has {truth.n_locations}."
            )
        return "field", ensemble.reconstructed, list(range(truth.n_locations))
    if not location_ids:
        raise SchemaError("Forecast file has neither location ids nor a reconstructed field.")
    index = {lid: j for j, lid in enumerate(truth.location_ids)}
    missing = [lid for lid in location_ids if lid not in index]
    if missing:
        raise SchemaError(f"Forecast locations {missing[:3]} are not in the truth field.")
    return "knots", ensemble.mean, [index[lid] for lid in location_ids]


def _truth_rows(truth: SpaceTimeField, times: np.ndarray) -> np.ndarray:
    rows = np.asarray(times) - truth.start
    if rows.size and (rows.min() < 0 or rows.max() >= truth.n_times):
        raise SchemaError(
            f"Forecast times [{times[0]}, {times[-1]}] exceed the truth range "
            f"[{truth.start}, {truth.end}]."
        )
    return rows


def _load_spec(path: Path, seed: int) -> EsnSpec:
    with path.open("r", encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict) or "esn" not in raw:
        raise ConfigurationError(f"{path} has no 'esn' section.")
    return parse_config({"esn": raw["esn"]}).esn.with_seed(seed)


def _write_table(table: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.10g")
    return path


# ================================
# Wind-ESN Commands
#    IOCommand(Command): transform Input -> Output
# ================================

@register_command("fit-mean")
class FitMean(IOCommand):
    """Fits the square-root harmonic mean and writes the standardized residual field."""
    input_key = None
    output_key = "harmonics"

    @staticmethod
    def add_arguments(parser):
        # Call parent to register 'input' and 'output'
        super(FitMean, FitMean).add_arguments(parser)
        parser.add_argument("--residuals", help="Residual field output path.")

    def transform(self):
        self.print_verbose("--- Fit harmonic mean ---")
        field = read_field(self.input_path)
        fit_on = field
        if self.config.splits.validation_end:
            # Test rows stay out of the mean fit
            fit_on = field.subset_times(field.start, self.config.splits.validation_end)
        model = fit_harmonics(fit_on, self.config.harmonics.periods)
        save_harmonics(self.output_path, model)
        residuals_path = self.work_path("residuals", self.args.residuals)
        write_field(residuals_path, detrend(field, model))
        self.print_verbose(
            f"   {model.n_harmonics} periods, {field.n_locations} locations, "
            f"gamma in [{model.scale.min():.3f}, {model.scale.max():.3f}]"
        )
        self.write_manifest(self.output_path, [self.input_path])
        self.write_manifest(residuals_path, [self.input_path])
        print(f"✅ Harmonics: {self.output_path}  Residuals: {residuals_path}")


@register_command("select-knots")
class SelectKnots(IOCommand):
    """Selects grid knots and separated high-wind knots from the raw field."""
    input_key = None
    output_key = "knots"

    @staticmethod
    def add_arguments(parser):
        super(SelectKnots, SelectKnots).add_arguments(parser)

    def transform(self):
        self.print_verbose("--- Select knots ---")
        field = read_field(self.input_path)
        if self.config.splits.train_end:
            field = field.subset_times(field.start, self.config.splits.train_end)
        k = self.config.knots
        knots = select_knots(field, k.grid_step, k.speed_threshold, k.min_separation)
        write_knots(self.output_path, knots, field)
        self.write_manifest(self.output_path, [self.input_path])
        print(f"✅ {len(knots)} knots ({knots.count('grid-knot')} grid, "
              f"{knots.count('high-wind-knot')} high-wind): {self.output_path}")


@register_command("fit-cov")
class FitCovariance(IOCommand):
    """Fits the nonstationary Matérn mixture covariance to training residuals."""
    input_key = "residuals"
    output_key = "covariance"

    @staticmethod
    def add_arguments(parser):
        super(FitCovariance, FitCovariance).add_arguments(parser)

    def transform(self):
        self.print_verbose("--- Fit covariance ---")
        residuals = read_field(self.input_path)
        if self.config.splits.train_end:
            residuals = residuals.subset_times(residuals.start, self.config.splits.train_end)
        c = self.config.covariance
        centers = default_centers(residuals.coords, c.centers)
        model = fit_covariance(residuals, centers, c.radius, c.bandwidth, restarts=c.restarts,
                               min_neighbors=c.min_neighbors, seed=c.seed)
        write_covariance(self.output_path, model)
        self.write_manifest(self.output_path, [self.input_path])
        print(f"✅ Covariance with {len(model.components)} components: {self.output_path}")


@register_command("cv")
class CrossValidate(Command):
    """Grid search over ESN hyperparameters by horizon-1 validation MSE at the knots."""

    @staticmethod
    def add_arguments(parser):
        parser.add_argument("--residuals", help="Residual field (default in work_dir).")
        parser.add_argument("--knots", help="Knots file (default in work_dir).")
        parser.add_argument("--output", help="Results table CSV.")
        parser.add_argument("--best", help="YAML file receiving the winning esn section.")
        parser.add_argument("--budget", type=int, help="Evaluate at most this many grid points.")
        parser.add_argument("--members", type=int, help="Ensemble size per grid point.")

    def execute(self):
        self.print_verbose("--- Cross-validate ---")
        residuals_path = self.require(self.work_path("residuals", self.args.residuals), "Residuals")
        knots_path = self.require(self.work_path("knots", self.args.knots), "Knots")
        residuals = read_field(residuals_path)
        knots = read_knots(knots_path, residuals)
        tl, vl, _ = _split_rows(residuals, self.config.splits)
        Y = residuals.values[:, _knot_columns(knots)]

        specs = self.config.grid_specs()
        budget = self.args.budget if self.args.budget is not None else self.config.grid.budget
        members = self.args.members or self.config.ensemble.members
        self.print_verbose(f"   {len(specs)} grid points, budget {budget}, {members} members")
        result = cross_validate(specs, Y[:tl + 1], Y[tl + 1:vl + 1], members=members,
                                budget=budget, seed=self.config.seed, threads=self.threads)

        out = _write_table(result.table, self.work_path("cv", self.args.output))
        best_path = self.work_path("best_spec", self.args.best)
        best_path.parent.mkdir(parents=True, exist_ok=True)
        with best_path.open("w", encoding="utf-8") as f:
            yaml.safe_dump({"esn": result.best.to_dict(), "mse_h1": result.best_mse}, f,
                           sort_keys=False)
        self.write_manifest(out, [residuals_path, knots_path])
        self.write_manifest(best_path, [residuals_path, knots_path])
        print(f"✅ Best h1 MSE {result.best_mse:.6g} (n_h={result.best.reservoir_size}, "
              f"lambda={result.best.ridge}): {best_path}")


@register_command("train-esn")
class TrainEsn(Command):
    """Trains the ESN ensemble on the training window at the knots."""

    @staticmethod
    def add_arguments(parser):
        parser.add_argument("--residuals", help="Residual field (default in work_dir).")
        parser.add_argument("--knots", help="Knots file (default in work_dir).")
        parser.add_argument("--spec", help="YAML with an esn section, e.g. written by cv.")
        parser.add_argument("--members", type=int, help="Ensemble size.")
        parser.add_argument("--output", help="Model file path.")
        parser.add_argument(
            "--store-matrices", action="store_true",
            help="Store reservoir matrices instead of regenerating them from seeds."
        )

    def execute(self):
        self.print_verbose("--- Train ESN ensemble ---")
        residuals_path = self.require(self.work_path("residuals", self.args.residuals), "Residuals")
        knots_path = self.require(self.work_path("knots", self.args.knots), "Knots")
        residuals = read_field(residuals_path)
        knots = read_knots(knots_path, residuals)
        tl, _, _ = _split_rows(residuals, self.config.splits)

        spec_path = Path(self.args.spec) if self.args.spec else None
        spec = _load_spec(self.require(spec_path, "Spec file"), self.config.seed) \
            if spec_path else self.config.esn_spec
        members = self.args.members or self.config.ensemble.members
        train = residuals.values[:tl + 1, _knot_columns(knots)]
        models = train_ensemble(spec, members, train, threads=self.threads)

        out = save_models(self.work_path("models", self.args.output), models,
                          store_matrices=self.args.store_matrices)
        self.write_manifest(out, [residuals_path, knots_path, spec_path])
        print(f"✅ {members} members (n_h={spec.reservoir_size}) on {len(knots)} knots: {out}")


@register_command("forecast")
class Forecast(Command):
    """Rolls the trained ensemble through the evaluation window; kriges to every location."""

    @staticmethod
    def add_arguments(parser):
        parser.add_argument("--models", help="Model file (default in work_dir).")
        parser.add_argument("--residuals", help="Residual field (default in work_dir).")
        parser.add_argument("--knots", help="Knots file (default in work_dir).")
        parser.add_argument(
            "--covariance", help="Covariance model; reconstruction is skipped when absent."
        )
        parser.add_argument("--output", help="Forecast file path.")
        parser.add_argument("--no-members", action="store_true",
                            help="Keep only the ensemble mean.")

    def execute(self):
        self.print_verbose("--- Forecast ---")
        models_path = self.require(self.work_path("models", self.args.models), "Models")
        residuals_path = self.require(self.work_path("residuals", self.args.residuals), "Residuals")
        knots_path = self.require(self.work_path("knots", self.args.knots), "Knots")
        residuals = read_field(residuals_path)
        knots = read_knots(knots_path, residuals)
        tl, _, last = _split_rows(residuals, self.config.splits)

        Y = residuals.values[:last + 1, _knot_columns(knots)]
        models = load_models(models_path)
        ensemble = forecast_ensemble(models, Y[:tl + 1], Y[tl + 1:],
                                     horizons=self.config.ensemble.horizons,
                                     start=residuals.start, keep_members=not self.args.no_members,
                                     threads=self.threads)
        cov_path = self.work_path("covariance", self.args.covariance)
        if cov_path.exists():
            weights = cached_kriging_weights(residuals.coords, knots, read_covariance(cov_path),
                                             cache_dir=self.work_dir / "cache")
            ensemble = ensemble.reconstruct(weights)
        else:
            self.print_verbose(f"   No covariance model at {cov_path}; knots only")
            cov_path = None

        knot_ids = [residuals.location_ids[i] for i in knots.indices]
        out = save_forecast(self.work_path("forecast", self.args.output), ensemble, knot_ids)
        self.write_manifest(out, [models_path, residuals_path, knots_path, cov_path])
        print(f"✅ {ensemble.member_count} members, horizons {list(ensemble.horizons)}, "
              f"{ensemble.times.size} target times: {out}")


@register_command("calibrate")
class Calibrate(Command):
    """Empirical forecast-error quantiles over the validation window."""

    @staticmethod
    def add_arguments(parser):
        parser.add_argument("--forecast", help="Forecast file (default in work_dir).")
        parser.add_argument("--residuals", help="Residual field (default in work_dir).")
        parser.add_argument("--output", help="Calibration file path.")

    def execute(self):
        self.print_verbose("--- Calibrate ---")
        forecast_path = self.require(self.work_path("forecast", self.args.forecast), "Forecast")
        residuals_path = self.require(self.work_path("residuals", self.args.residuals), "Residuals")
        residuals = read_field(residuals_path)
        ensemble, ids = load_forecast(forecast_path)
        target, grid, cols = _forecast_target(ensemble, ids, residuals)

        mask = _window_mask(ensemble.times, self.config.splits, "validation")
        truth = residuals.values[_truth_rows(residuals, ensemble.times)][:, cols]
        probabilities = interval_probabilities(self.config.calibration.levels)
        quantiles = calibrate(truth[mask], grid[:, mask], probabilities, ensemble.horizons)

        out = save_calibration(self.work_path("calibration", self.args.output), quantiles,
                               [residuals.location_ids[j] for j in cols])
        self.write_manifest(out, [forecast_path, residuals_path])
        print(f"✅ {len(probabilities)} quantiles on {int(mask.sum())} {target} times: {out}")


@register_command("evaluate")
class Evaluate(Command):
    """Scores forecast files against the residual field (MSE per horizon, coverage)."""

    @staticmethod
    def add_arguments(parser):
        parser.add_argument(
            "--forecast", nargs="+",
            help="Forecast .npz files or SpaceTimeFiles compared directly (default in work_dir)."
        )
        parser.add_argument("--truth", help="Truth field (default: residuals in work_dir).")
        parser.add_argument("--calibration",
                            help="Calibration file for coverage of the first forecast.")
        parser.add_argument("--window", choices=WINDOWS, default="test",
                            help="Target times to score.")
        parser.add_argument("--output", help="MSE records CSV.")
        parser.add_argument("--coverage-output", help="Coverage table CSV.")

    def execute(self):
        self.print_verbose("--- Evaluate ---")
        truth_path = self.require(self.work_path("residuals", self.args.truth), "Truth")
        truth = read_field(truth_path)
        forecast_paths = [Path(p) for p in self.args.forecast] if self.args.forecast \
            else [self.work_path("forecast")]
        records: List[Dict] = []
        for path in forecast_paths:
            self.require(path, "Forecast")
            if path.suffix.lower() == ".npz":
                records += self._score_ensemble(path, truth)
            else:
                records.append(self._score_field(path, truth))
        table = pd.DataFrame(records, columns=["forecast", "target", "window", "horizon", "mse",
                                               "n_pairs"])
        out = _write_table(table, self.work_path("evaluation", self.args.output))
        inputs = [truth_path, *forecast_paths]

        cal_path = Path(self.args.calibration) if self.args.calibration \
            else self.work_path("calibration")
        if cal_path.exists() and forecast_paths[0].suffix.lower() == ".npz":
            cov = self._coverage(forecast_paths[0], cal_path, truth)
            cov_out = _write_table(cov, self.work_path("coverage", self.args.coverage_output))
            self.write_manifest(cov_out, inputs + [cal_path])
            self.print_verbose(cov.to_string(index=False))
        self.write_manifest(out, inputs)
        self.print_verbose(table.to_string(index=False))
        print(f"✅ {len(records)} MSE records: {out}")

    def _score_ensemble(self, path: Path, truth: SpaceTimeField) -> List[Dict]:
        ensemble, ids = load_forecast(path)
        target, grid, cols = _forecast_target(ensemble, ids, truth)
        mask = _window_mask(ensemble.times, self.config.splits, self.args.window)
        observed = truth.values[_truth_rows(truth, ensemble.times)][:, cols][mask]
        out = []
        for k, h in enumerate(ensemble.horizons):
            pred = grid[k][mask]
            out.append({"forecast": path.stem, "target": target, "window": self.args.window,
                        "horizon": h, "mse": mse(observed, pred),
                        "n_pairs": int(np.isfinite(observed - pred).sum())})
        return out

    def _score_field(self, path: Path, truth: SpaceTimeField) -> Dict:
        """Direct comparison of two fields on their shared times and locations (horizon 0)."""
        pred = read_field(path)
        known = set(truth.location_ids)
        ids = [lid for lid in pred.location_ids if lid in known]
        if not ids:
            raise SchemaError(f"{path} shares no locations with the truth field.")
        first, last = max(pred.start, truth.start), min(pred.end, truth.end)
        if first > last:
            raise SchemaError(f"{path} shares no times with the truth field.")
        times = np.arange(first, last + 1)
        times = times[_window_mask(times, self.config.splits, self.args.window)]
        p_cols = [pred.location_ids.index(i) for i in ids]
        t_cols = [truth.location_ids.index(i) for i in ids]
        a = truth.values[times - truth.start][:, t_cols]
        b = pred.values[times - pred.start][:, p_cols]
        return {"forecast": path.stem, "target": "field", "window": self.args.window,
                "horizon": 0, "mse": mse(a, b), "n_pairs": int(np.isfinite(a - b).sum())}

    def _coverage(self, forecast_path: Path, cal_path: Path, truth: SpaceTimeField
                  ) -> pd.DataFrame:
        ensemble, ids = load_forecast(forecast_path)
        quantiles, cal_ids = load_calibration(cal_path)
        _, grid, cols = _forecast_target(ensemble, ids, truth)
        if tuple(cal_ids) and tuple(cal_ids) != tuple(truth.location_ids[j] for j in cols):
            raise SchemaError(f"{cal_path} was calibrated on different locations.")
        mask = _window_mask(ensemble.times, self.config.splits, self.args.window)
        observed = truth.values[_truth_rows(truth, ensemble.times)][:, cols][mask]
        return coverage_table(observed, grid[:, mask], quantiles, self.config.calibration.levels)


@register_command("baseline")
class Baseline(Command):
    """Comparison forecasts: persistence, ARIMA, VAR (at knots) or EOF-ESN (all locations)."""

    @staticmethod
    def add_arguments(parser):
        parser.add_argument("method", choices=METHODS, help="Baseline method.")
        parser.add_argument("--residuals", help="Residual field (default in work_dir).")
        parser.add_argument("--knots", help="Knots file (default in work_dir).")
        parser.add_argument("--covariance",
                            help="Covariance model for kriging knot baselines to every location.")
        parser.add_argument("--members", type=int, help="Ensemble size for eof-esn.")
        parser.add_argument("--output", help="Forecast file path.")

    def execute(self):
        method = self.args.method
        self.print_verbose(f"--- Baseline: {method} ---")
        residuals_path = self.require(self.work_path("residuals", self.args.residuals), "Residuals")
        residuals = read_field(residuals_path)
        tl, vl, last = _split_rows(residuals, self.config.splits)
        horizons = self.config.ensemble.horizons
        b = self.config.baselines
        inputs = [residuals_path]

        if method == "eof-esn":
            Y = residuals.values[:last + 1]
            members = self.args.members or self.config.ensemble.members
            ensemble, basis = eof_esn(self.config.esn_spec, members, Y[:tl + 1], Y[tl + 1:],
                                      b.n_eof, horizons=horizons, start=residuals.start,
                                      threads=self.threads)
            self.print_verbose(
                f"   {basis.n_eof} EOFs explain {basis.variance_fraction().sum():.1%} of variance"
            )
            ids: List[str] = []
        else:
            knots_path = self.require(self.work_path("knots", self.args.knots), "Knots")
            inputs.append(knots_path)
            knots = read_knots(knots_path, residuals)
            Y = residuals.values[:last + 1, _knot_columns(knots)]
            train, validation = Y[:tl + 1], Y[tl + 1:vl + 1]
            if method == "persistence":
                rolling = rolling_persistence
            elif method == "var":
                model, _ = select_var_order(train, validation, b.var_orders)
                self.print_verbose(f"   VAR order {model.order}")
                rolling = partial(rolling_var, model)
            else:
                orders = arima_order_grid(b.arima_p, b.arima_d, b.arima_q)
                models = fit_arima_sites(train, validation, orders, threads=self.threads)
                rolling = partial(rolling_arima_sites, models)
            grid = target_grid(rolling, Y, tl, horizons)
            ensemble = ForecastEnsemble(horizons=tuple(horizons),
                                        times=np.arange(residuals.start + tl + 1,
                                                        residuals.start + last + 1),
                                        mean=grid, members=None, seeds=())
            cov_path = self.work_path("covariance", self.args.covariance)
            if cov_path.exists():
                weights = cached_kriging_weights(residuals.coords, knots,
                                                 read_covariance(cov_path),
                                                 cache_dir=self.work_dir / "cache")
                ensemble = ensemble.reconstruct(weights)
                inputs.append(cov_path)
            ids = [residuals.location_ids[i] for i in knots.indices]

        out_path = Path(self.args.output) if self.args.output \
            else self.work_dir / f"baseline_{method}.npz"
        out = save_forecast(out_path, ensemble, ids)
        self.write_manifest(out, inputs)
        print(f"✅ {method} forecasts for {ensemble.times.size} target times: {out}")


@register_command("lorenz-study")
class LorenzStudy(Command):
    """Compares ESN, VAR, ARIMA and persistence on simulated modified Lorenz 96 data."""

    @staticmethod
    def add_arguments(parser):
        parser.add_argument("--etas", type=float, nargs="+", help="Nonlinearity levels.")
        parser.add_argument("--replicates", type=int, help="Replicates per level.")
        parser.add_argument("--output", help="Study table CSV.")

    def execute(self):
        self.print_verbose("--- Lorenz study ---")
        lc = self.config.lorenz
        etas = tuple(self.args.etas) if self.args.etas else lc.etas
        replicates = self.args.replicates or lc.replicates
        table = run_study(etas, replicates, lc.methods,
                          config=replace(lc.simulation, seed=self.config.seed),
                          members=lc.members, horizons=self.config.ensemble.horizons,
                          threads=self.threads)
        out = _write_table(table, self.work_path("lorenz", self.args.output))
        self.write_manifest(out)
        self.print_verbose(table.to_string(index=False))
        print(f"✅ {len(table)} rows ({len(etas)} etas x {replicates} replicates): {out}")


@register_command("power")
class Power(Command):
    """Converts forecasts to turbine power and reports absolute energy error and cost."""

    @staticmethod
    def add_arguments(parser):
        parser.add_argument("--field", help="Observed wind-speed field (default data.field).")
        parser.add_argument("--forecast", help="Forecast file with a reconstructed field.")
        parser.add_argument("--harmonics", help="Harmonic model (default in work_dir).")
        parser.add_argument("--calibration", help="Calibration file for quantile forecasts.")
        parser.add_argument("--turbines", help="Turbine registry CSV (default data.turbines).")
        parser.add_argument("--location",
                            help="Location for a single turbine from the power section.")
        parser.add_argument("--horizon", type=int, default=1, help="Forecast horizon.")
        parser.add_argument("--window", choices=WINDOWS, default="test")
        parser.add_argument("--output", help="Energy error CSV.")

    def execute(self):
        self.print_verbose("--- Power ---")
        field_path = self.require(self.field_path(self.args.field), "Field")
        forecast_path = self.require(self.work_path("forecast", self.args.forecast), "Forecast")
        harmonics_path = self.require(self.work_path("harmonics", self.args.harmonics),
                                      "Harmonics")
        field = read_field(field_path)
        harmonics = load_harmonics(harmonics_path)
        ensemble, _ = load_forecast(forecast_path)
        if ensemble.reconstructed is None:
            raise ConfigurationError(
                f"{forecast_path} has no reconstructed field; forecast with a covariance model."
            )
        if self.args.horizon not in ensemble.horizons:
            raise ConfigurationError(
                f"Horizon {self.args.horizon} is not in the forecast horizons "
                f"{list(ensemble.horizons)}."
            )
        k = ensemble.horizons.index(self.args.horizon)
        mask = _window_mask(ensemble.times, self.config.splits, self.args.window)
        times = ensemble.times[mask]
        residual = ensemble.reconstructed[k][mask]
        template = field.with_values(residual, start=int(times[0]), units="residual")
        predicted = retrend(template, harmonics).values
        observed = field.values[_truth_rows(field, times)]

        quantile_residuals: Dict[float, np.ndarray] = {}
        inputs = [field_path, forecast_path, harmonics_path]
        cal_path = Path(self.args.calibration) if self.args.calibration \
            else self.work_path("calibration")
        if cal_path.exists():
            quantiles, cal_ids = load_calibration(cal_path)
            if tuple(cal_ids) != field.location_ids:
                raise SchemaError(f"{cal_path} was not calibrated on the full field.")
            hk = quantiles.horizons.index(self.args.horizon)
            for p in quantiles.probabilities:
                quantile_residuals[float(p)] = residual + quantiles.quantile(float(p))[hk][None, :]
            inputs.append(cal_path)

        sites, registry = self._sites(field)
        if registry is not None:
            inputs.append(registry)
        step = self.config.power.step_hours
        price = self.config.power.price
        index = {lid: j for j, lid in enumerate(field.location_ids)}
        rows = []
        for site in sites:
            if site.location_id not in index:
                raise SchemaError(f"Turbine location {site.location_id} is not in the field.")
            j = index[site.location_id]
            truth_power = site_power(observed[:, j], site, times)
            error = energy_error(truth_power, site_power(predicted[:, j], site, times), step)
            rows.append({"location_id": site.location_id, "horizon": self.args.horizon,
                         "forecast": "mean", "energy_error_kwh": error,
                         "cost": energy_cost(error, price)})
            if quantile_residuals:
                speeds = {p: retrend(template.with_values(r), harmonics).values[:, j]
                          for p, r in quantile_residuals.items()}
                errors = quantile_energy_error(observed[:, j], speeds, site, step, times)
                for p, err in errors.items():
                    rows.append({"location_id": site.location_id, "horizon": self.args.horizon,
                                 "forecast": f"q{p:g}", "energy_error_kwh": err,
                                 "cost": energy_cost(err, price)})
        out = _write_table(pd.DataFrame(rows), self.work_path("power", self.args.output))
        self.write_manifest(out, inputs)
        print(f"✅ Energy errors for {len(sites)} turbines over {times.size} hours: {out}")

    def _sites(self, field: SpaceTimeField) -> Tuple[List[TurbineSite], Optional[Path]]:
        registry = self.args.turbines or self.config.data.turbines
        if registry and not self.args.location:
            path = self.require(Path(self.args.turbines) if self.args.turbines
                                else self.resolve(registry), "Turbine registry")
            return load_turbine_sites(path), path
        p = self.config.power
        site = TurbineSite(location_id=self.args.location or field.location_ids[0],
                           hub_height=p.hub_height, curve=resolve_curve(p.curve, self.base_dir),
                           alpha=p.alpha)
        return [site], None


@register_command("generate-demo")
class GenerateDemo(Command):
    """Writes the synthetic demo field, a turbine registry and a matching config."""

    @staticmethod
    def add_arguments(parser):
        parser.add_argument("output_dir", help="Folder to create.")
        parser.add_argument("--hours", type=int, default=DemoSpec().n_hours)
        parser.add_argument("--side", type=int, default=DemoSpec().n_side,
                            help="Locations per side of the square lattice.")
        parser.add_argument("--csv", action="store_true", help="Write the field as CSV.")

    def execute(self):
        self.print_verbose("--- Generate demo dataset ---")
        out_dir = Path(self.args.output_dir)
        spec = DemoSpec(n_side=self.args.side, n_hours=self.args.hours, seed=self.config.seed)
        field = generate_demo_field(spec)
        field_path = write_field(out_dir / ("field.csv" if self.args.csv else "field.wsf"), field)
        turbines_path = out_dir / "turbines.csv"
        _write_table(demo_turbines(field), turbines_path)
        config = parse_config(demo_config(field_path.name, turbines_path.name, field.n_times,
                                          seed=self.config.seed))
        config_path = out_dir / "config.yaml"
        dump_config(config, config_path)
        self.write_manifest(field_path)
        print(f"✅ {field.n_locations} locations x {field.n_times} hours: {field_path}")
        print(f"   Config: {config_path}")


@register_command("periodogram")
class Periodogram(IOCommand):
    """Amplitude spectrum of the square-root field, for choosing harmonic periods."""
    input_key = None
    output_key = "periodogram"

    @staticmethod
    def add_arguments(parser):
        super(Periodogram, Periodogram).add_arguments(parser)
        parser.add_argument("--location", help="Location id (default: mean over locations).")
        parser.add_argument("--top", type=int, default=5, help="Peaks to print.")

    def transform(self):
        field = read_field(self.input_path)
        root = np.sqrt(np.clip(field.values, 0.0, None))
        if self.args.location:
            if self.args.location not in field.location_ids:
                raise SchemaError(f"Location {self.args.location} is not in the field.")
            series = root[:, field.location_ids.index(self.args.location)]
        else:
            series = root.mean(axis=1)
        spectrum = periodogram(series)
        table = pd.DataFrame({"period": spectrum.periods, "amplitude": spectrum.amplitudes})
        out = _write_table(table, self.output_path)
        self.write_manifest(out, [self.input_path])
        for period, amplitude in spectrum.peaks(self.args.top):
            print(f"   period {period:10.2f} h  amplitude {amplitude:.4f}")
        print(f"✅ Periodogram: {out}")


@register_command("diagnostics")
class Diagnostics(Command):
    """Residual scale map, pooled histogram and normal Q-Q pairs."""

    @staticmethod
    def add_arguments(parser):
        parser.add_argument("--residuals", help="Residual field (default in work_dir).")
        parser.add_argument("--harmonics", help="Harmonic model (default in work_dir).")
        parser.add_argument("--bins", type=int, default=50)
        parser.add_argument("--output",
                            help="Scale table CSV; _histogram and _qq tables go next to it.")

    def execute(self):
        residuals_path = self.require(self.work_path("residuals", self.args.residuals), "Residuals")
        harmonics_path = self.require(self.work_path("harmonics", self.args.harmonics),
                                      "Harmonics")
        diag = scaling_diagnostics(read_field(residuals_path), load_harmonics(harmonics_path),
                                   bins=self.args.bins)
        out = self.work_path("diagnostics", self.args.output)
        _write_table(pd.DataFrame({"location_id": diag.location_ids, "gamma": diag.scale}), out)
        _write_table(pd.DataFrame({"left": diag.histogram_edges[:-1],
                                   "right": diag.histogram_edges[1:],
                                   "count": diag.histogram_counts}),
                     out.with_name(f"{out.stem}_histogram.csv"))
        _write_table(pd.DataFrame({"theoretical": diag.qq_theoretical,
                                   "sample": diag.qq_sample}),
                     out.with_name(f"{out.stem}_qq.csv"))
        self.write_manifest(out, [residuals_path, harmonics_path])
        print(f"   skewness {diag.extra['skewness']:.3f}  kurtosis {diag.extra['kurtosis']:.3f}")
        print(f"✅ Diagnostics: {out}")


@register_command("pipeline")
class Pipeline(Command):
    """Runs fit-mean, select-knots, fit-cov, cv, train-esn, forecast, calibrate and evaluate."""

    @staticmethod
    def add_arguments(parser):
        parser.add_argument("--skip-cv", action="store_true",
                            help="Train with the esn section instead of searching the grid.")
        parser.add_argument("--budget", type=int, help="Grid points evaluated by cv.")
        parser.add_argument("--baselines", nargs="*", choices=METHODS, default=["persistence"],
                            help="Baselines to run and score alongside the ESN.")

    def execute(self):
        steps: List[Tuple[str, List[str]]] = [
            ("fit-mean", []), ("select-knots", []), ("fit-cov", []),
        ]
        if not self.args.skip_cv:
            cv = ["--budget", str(self.args.budget)] if self.args.budget is not None else []
            steps.append(("cv", cv))
            steps.append(("train-esn", ["--spec", str(self.work_path("best_spec"))]))
        else:
            steps.append(("train-esn", []))
        steps += [("forecast", []), ("calibrate", [])]
        steps += [("baseline", [m]) for m in self.args.baselines]
        forecasts = [str(self.work_path("forecast"))] + \
                    [str(self.work_dir / f"baseline_{m}.npz") for m in self.args.baselines]
        steps.append(("evaluate", ["--forecast", *forecasts]))

        for i, (name, extra) in enumerate(steps, 1):
            print(f"--- [{i}/{len(steps)}] {name} ---", flush=True)
            self._run_step(name, extra)
        print(f"✅ Pipeline finished: {self.work_dir}")

    def _run_step(self, name: str, extra: Sequence[str]) -> None:
        parser = argparse.ArgumentParser(prog=name)
        COMMANDS[name].add_arguments(parser)
        args = parser.parse_args(list(extra))
        for key, value in vars(self.args).items():
            if key not in ("command", "handler_class", "skip_cv", "budget", "baselines"):
                setattr(args, key, value)
        args.command = name
        step = COMMANDS[name](args)
        step._config = self.config
        step.execute()


COMMANDS = COMMAND_REGISTRY
