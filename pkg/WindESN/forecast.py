"""Multi-step ensemble forecasting at knots, reconstruction, calibration and scores.

Forecast arrays are laid out on the evaluation target grid: for an evaluation window
T+1..T_max, ``forecasts[k, i]`` is the horizon ``horizons[k]`` forecast for time T+1+i,
issued at time T+1+i-h. Targets that cannot be reached from an origin inside the
window (the first h-1 rows of horizon h) are NaN.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from WindESN.errors import ConfigurationError, InsufficientDataError, \
    InsufficientHistoryError, SchemaError
from WindESN.esn import EsnModel, EsnSpec, lagged_input, readout, step_batch, train_esn, \
    update_state, ReservoirState
from WindESN.parallel import parallel_map
from WindESN.spatial import KrigingWeights

HORIZONS: Tuple[int, ...] = (1, 2, 3)
DEFAULT_LEVELS: Tuple[float, ...] = (0.95, 0.80, 0.60)


def evaluation_window(T: int, T_max: int, h: int) -> List[int]:
    """Target times scored for horizon ``h`` when training ends at T and data ends at T_max."""
    if T >= T_max:
        raise ConfigurationError(f"Training end {T} must precede data end {T_max}.")
    if h < 1:
        raise ConfigurationError(f"Horizon must be >= 1, got {h}.")
    return list(range(T + h, T_max + 1))


def forecast_knots(model: EsnModel, history: np.ndarray,
                   horizons: Sequence[int] = HORIZONS) -> Dict[int, np.ndarray]:
    """Forecasts for t+1.. from observations y_0..y_t, substituting earlier forecasts.

    The reservoir is driven with observed lags through time t+1; for h >= 2 the
    unavailable lags y_{t+1}, .., y_{t+h-1} are replaced by their forecasts.
    """
    Y = _as_matrix(history)
    m = model.spec.n_lags
    if Y.shape[0] < m:
        raise InsufficientHistoryError(
            f"History has {Y.shape[0]} steps but the model uses {m} lags."
        )
    if Y.shape[0] > m:
        states = model.states(Y)
        state = ReservoirState(states[-1], t=Y.shape[0] - 1)
    else:
        state = ReservoirState(np.zeros(model.matrices.reservoir_size), t=Y.shape[0] - 1)

    observed = [Y[-1 - j] for j in range(m)]
    predicted: List[np.ndarray] = []
    out: Dict[int, np.ndarray] = {}
    for k in range(1, max(horizons) + 1):
        x = lagged_input(predicted[::-1] + observed, m)
        state = update_state(state, x, model.matrices, model.spec, model.activation)
        y_hat = readout(state, model.readout_map)
        predicted.append(y_hat)
        if k in horizons:
            out[k] = y_hat
    return out


def rolling_forecasts(model: EsnModel, series: np.ndarray, first_origin: int,
                      last_origin: int, horizons: Sequence[int] = HORIZONS
                      ) -> Dict[int, np.ndarray]:
    """Forecasts from every origin t in [first_origin, last_origin] at once.

    The reservoir is advanced with observed inputs only; substitution happens
    inside each multi-horizon emission.

    Returns:
        {h: (n_origins, n*) forecasts of y_{t+h}}.
    """
    Y = _as_matrix(series)
    m = model.spec.n_lags
    if first_origin < m - 1:
        raise InsufficientHistoryError(
            f"Origin {first_origin} has fewer than {m} observed lags."
        )
    if last_origin + 1 > Y.shape[0] - 1 or first_origin > last_origin:
        raise SchemaError(
            f"Origins [{first_origin}, {last_origin}] do not fit a series of length {Y.shape[0]}."
        )
    states = model.states(Y)  # row i is the state at time i + m
    origins = np.arange(first_origin, last_origin + 1)
    H = states[origins + 1 - m]
    observed = [Y[origins - j] for j in range(m)]
    predicted: List[np.ndarray] = []
    ones = np.ones((origins.size, 1))
    out: Dict[int, np.ndarray] = {}
    for k in range(1, max(horizons) + 1):
        if k > 1:
            recent = predicted[::-1] + observed
            X = np.hstack([ones] + recent[:m])
            H = step_batch(H, X, model.matrices, model.spec, model.activation)
        y_hat = readout(H, model.readout_map)
        predicted.append(y_hat)
        if k in horizons:
            out[k] = y_hat
    return out


RollingForecaster = Callable[[np.ndarray, int, int, Sequence[int]], Dict[int, np.ndarray]]


def target_grid(rolling: RollingForecaster, series: np.ndarray, T: int,
                horizons: Sequence[int] = HORIZONS) -> np.ndarray:
    """Lay rolling forecasts from origins T..T_max-1 onto the target grid T+1..T_max.

    Args:
        rolling: ``rolling(series, first_origin, last_origin, horizons)`` returning
            {h: (n_origins, n*)} forecasts, as ``rolling_forecasts`` does.
        series: (T_max + 1, n*) observations, training rows first.
        T: Index of the last training row.

    Returns:
        (H, T_max - T, n*) forecasts, NaN where the origin would precede T.
    """
    series = _as_matrix(series)
    T_max = series.shape[0] - 1
    n_eval = T_max - T
    if n_eval < 1:
        raise ConfigurationError(f"No evaluation rows after training end {T}.")
    preds = rolling(series, T, T_max - 1, horizons)
    grid = np.full((len(horizons), n_eval, series.shape[1]), np.nan)
    for k, h in enumerate(horizons):
        # origin t = T + i forecasts target T + i + h, stored at row i + h - 1
        valid = n_eval - h + 1
        if valid > 0:
            grid[k, h - 1:] = np.asarray(preds[h]).reshape(-1, series.shape[1])[:valid]
    return grid


@dataclass(frozen=True)
class ForecastEnsemble:
    """Ensemble forecasts on the evaluation target grid.

    Attributes:
        horizons: Forecast horizons, one per leading axis entry.
        times: Target time index of each row.
        mean: (H, n_times, n*) ensemble-mean knot forecasts.
        members: (M, H, n_times, n*) member forecasts, or None when not kept.
        seeds: Seed of each member.
        reconstructed: (H, n_times, n) full-field forecasts, once reconstructed.
    """
    horizons: Tuple[int, ...]
    times: np.ndarray
    mean: np.ndarray
    members: Optional[np.ndarray]
    seeds: Tuple[int, ...]
    reconstructed: Optional[np.ndarray] = None

    @property
    def member_count(self) -> int:
        return len(self.seeds)

    def horizon(self, h: int) -> np.ndarray:
        return self.mean[self.horizons.index(h)]

    def reconstruct(self, weights: KrigingWeights) -> "ForecastEnsemble":
        """Apply kriging weights to the ensemble-mean knot forecasts."""
        return replace(self, reconstructed=weights.apply(self.mean))


def run_ensemble(spec: EsnSpec, member_count: int, train: np.ndarray, evaluation: np.ndarray,
                 *, horizons: Sequence[int] = HORIZONS, start: int = 0,
                 keep_members: bool = True, threads: Optional[int] = None) -> ForecastEnsemble:
    """Train ``member_count`` ESNs (seeds spec.seed + i) and roll them through evaluation.

    Args:
        train: (T+1, n*) training residuals at times start..start+T.
        evaluation: (T_max - T, n*) residuals following the training window.
        start: Time index of the first training row.
    """
    seeds = _member_seeds(spec, member_count)
    train = _as_matrix(train)

    def member(seed: int) -> EsnModel:
        return train_esn(spec.with_seed(seed), train)

    return _ensemble_from(member, seeds, train, evaluation, horizons, start, keep_members,
                          threads)


def train_ensemble(spec: EsnSpec, member_count: int, train: np.ndarray,
                   threads: Optional[int] = None) -> List[EsnModel]:
    """Train the members run_ensemble would train, for saving to a model file."""
    seeds = _member_seeds(spec, member_count)
    train = _as_matrix(train)
    return parallel_map(lambda s: train_esn(spec.with_seed(s), train), seeds, threads,
                        desc="   Members", unit="member")


def forecast_ensemble(models: Sequence[EsnModel], train: np.ndarray, evaluation: np.ndarray,
                      *, horizons: Sequence[int] = HORIZONS, start: int = 0,
                      keep_members: bool = True, threads: Optional[int] = None
                      ) -> ForecastEnsemble:
    """Roll already trained members through ``evaluation``; same layout as run_ensemble."""
    if not models:
        raise ConfigurationError("No ensemble members to forecast with.")
    by_seed = {m.spec.seed: m for m in models}
    if len(by_seed) != len(models):
        raise ConfigurationError("Ensemble members must have distinct seeds.")
    seeds = tuple(m.spec.seed for m in models)
    return _ensemble_from(by_seed.__getitem__, seeds, train, evaluation, horizons, start,
                          keep_members, threads)


def _member_seeds(spec: EsnSpec, member_count: int) -> Tuple[int, ...]:
    if member_count < 1:
        raise ConfigurationError(f"ensemble.members must be >= 1, got {member_count}.")
    return tuple(spec.seed + i for i in range(member_count))


def _ensemble_from(model_for: Callable[[int], EsnModel], seeds: Tuple[int, ...],
                   train: np.ndarray, evaluation: np.ndarray, horizons: Sequence[int],
                   start: int, keep_members: bool, threads: Optional[int]
                   ) -> ForecastEnsemble:
    train = _as_matrix(train)
    evaluation = _as_matrix(evaluation)
    if train.shape[1] != evaluation.shape[1]:
        raise SchemaError(
            f"Training has {train.shape[1]} series, evaluation has {evaluation.shape[1]}."
        )
    horizons = tuple(sorted(set(int(h) for h in horizons)))
    full = np.vstack([train, evaluation])
    T = train.shape[0] - 1
    T_max = full.shape[0] - 1
    n_eval = evaluation.shape[0]

    def member(seed: int) -> np.ndarray:
        model = model_for(seed)
        return target_grid(lambda s, a, b, hs: rolling_forecasts(model, s, a, b, hs),
                           full, T, horizons)

    if keep_members:
        members = np.stack(parallel_map(member, seeds, threads, desc="   Members",
                                        unit="member"))
        mean = members.mean(axis=0)
    else:
        members = None
        mean = np.zeros((len(horizons), n_eval, full.shape[1]))
        for grid in parallel_map(member, seeds, threads, desc="   Members", unit="member"):
            mean += grid
        mean /= len(seeds)
    times = np.arange(start + T + 1, start + T_max + 1)
    return ForecastEnsemble(horizons=horizons, times=times, mean=mean, members=members,
                            seeds=seeds)


@dataclass(frozen=True)
class CalibrationQuantiles:
    """Empirical quantiles of (truth - forecast) per horizon and location.

    Attributes:
        horizons: Horizon of each leading entry.
        probabilities: (P,) increasing probability levels.
        quantiles: (H, n, P) error quantiles, nondecreasing along the last axis.
    """
    horizons: Tuple[int, ...]
    probabilities: np.ndarray
    quantiles: np.ndarray

    def quantile(self, p: float) -> np.ndarray:
        """(H, n) quantiles at probability ``p``."""
        idx = np.flatnonzero(np.isclose(self.probabilities, p, rtol=0, atol=1e-9))
        if idx.size == 0:
            raise ConfigurationError(
                f"Probability {p} was not calibrated; available: "
                f"{self.probabilities.tolist()}."
            )
        return self.quantiles[:, :, idx[0]]

    def interval(self, level: float, forecasts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Closed prediction interval [f + q_{(1-a)/2}, f + q_{(1+a)/2}] for (H, T, n) forecasts."""
        lo = self.quantile((1.0 - level) / 2.0)
        hi = self.quantile((1.0 + level) / 2.0)
        return forecasts + lo[:, None, :], forecasts + hi[:, None, :]


def prediction_interval(forecasts: np.ndarray, quantiles: CalibrationQuantiles,
                        level: float) -> Tuple[np.ndarray, np.ndarray]:
    return quantiles.interval(level, np.asarray(forecasts, dtype=float))


def interval_probabilities(levels: Sequence[float]) -> Tuple[float, ...]:
    """Probability levels needed for central intervals at each nominal level."""
    probs = set()
    for level in levels:
        if not 0 < level < 1:
            raise ConfigurationError(f"Interval level must be in (0, 1), got {level}.")
        probs.add(round((1.0 - level) / 2.0, 12))
        probs.add(round((1.0 + level) / 2.0, 12))
    return tuple(sorted(probs))


def calibrate(truth: np.ndarray, forecasts: np.ndarray, probabilities: Sequence[float],
              horizons: Sequence[int] = HORIZONS) -> CalibrationQuantiles:
    """Empirical quantiles of the forecast errors over a calibration window.

    Args:
        truth: (T, n) observed residuals at the target times.
        forecasts: (H, T, n) forecasts on the same grid (NaN where not issued).
        probabilities: Probability levels in (0, 1).

    Raises:
        InsufficientDataError: If a (horizon, location) has too few samples to
            resolve the most extreme requested probability.
    """
    truth = np.asarray(truth, dtype=float)
    forecasts = np.asarray(forecasts, dtype=float)
    _check_shapes(truth, forecasts)
    probs = np.array(sorted(float(p) for p in probabilities))
    if probs.size == 0 or probs[0] <= 0 or probs[-1] >= 1:
        raise ConfigurationError(f"Probabilities must lie in (0, 1), got {probs.tolist()}.")
    needed = int(math.ceil(1.0 / min(probs[0], 1.0 - probs[-1]) - 1e-9))

    errors = truth[None] - forecasts
    H, _, n = errors.shape
    quantiles = np.empty((H, n, probs.size))
    for k in range(H):
        for j in range(n):
            sample = errors[k, :, j]
            sample = sample[np.isfinite(sample)]
            if sample.size < needed:
                raise InsufficientDataError(
                    f"Horizon {horizons[k]} at location {j} has {sample.size} calibration "
                    f"errors; {needed} are needed for probability {probs[0]}."
                )
            quantiles[k, j] = np.quantile(sample, probs, method="lower")
    return CalibrationQuantiles(horizons=tuple(horizons), probabilities=probs,
                                quantiles=quantiles)


@dataclass(frozen=True)
class CoverageResult:
    """Fraction of targets inside the interval, per (horizon, location) and summarized."""
    level: float
    horizons: Tuple[int, ...]
    per_location: np.ndarray
    mean: np.ndarray
    std: np.ndarray


def coverage(truth: np.ndarray, forecasts: np.ndarray, quantiles: CalibrationQuantiles,
             level: float) -> CoverageResult:
    truth = np.asarray(truth, dtype=float)
    forecasts = np.asarray(forecasts, dtype=float)
    _check_shapes(truth, forecasts)
    lo, hi = quantiles.interval(level, forecasts)
    valid = np.isfinite(forecasts) & np.isfinite(truth)[None]
    inside = (lo <= truth[None]) & (truth[None] <= hi) & valid
    counts = valid.sum(axis=1)
    per_location = np.where(counts > 0, inside.sum(axis=1) / np.maximum(counts, 1), np.nan)
    return CoverageResult(level=level, horizons=quantiles.horizons, per_location=per_location,
                          mean=np.nanmean(per_location, axis=1),
                          std=np.nanstd(per_location, axis=1))


def coverage_table(truth: np.ndarray, forecasts: np.ndarray, quantiles: CalibrationQuantiles,
                   levels: Sequence[float] = DEFAULT_LEVELS) -> pd.DataFrame:
    """One row per level, one column per horizon, cells 'mean% (sd%)'."""
    rows = []
    for level in levels:
        res = coverage(truth, forecasts, quantiles, level)
        row = {"interval": f"{level:.0%}"}
        for h, m, s in zip(res.horizons, res.mean, res.std):
            row[f"h{h}"] = f"{100 * m:.1f}% ({100 * s:.1f}%)"
        rows.append(row)
    return pd.DataFrame(rows)


def mse(truth: np.ndarray, forecasts: np.ndarray) -> float:
    """Mean squared error over all pairs where both values are finite."""
    truth = np.asarray(truth, dtype=float)
    forecasts = np.asarray(forecasts, dtype=float)
    try:
        diff = np.broadcast_to(truth, np.broadcast_shapes(truth.shape, forecasts.shape)) \
               - forecasts
    except ValueError as e:
        raise SchemaError(f"Shapes {truth.shape} and {forecasts.shape} do not agree.") from e
    diff = diff[np.isfinite(diff)]
    if diff.size == 0:
        return float("nan")
    return float(np.mean(diff * diff))


def horizon_mse(truth: np.ndarray, forecasts: np.ndarray) -> np.ndarray:
    """MSE for each leading (horizon) entry of ``forecasts`` against (T, n) truth."""
    forecasts = np.asarray(forecasts, dtype=float)
    return np.array([mse(truth, f) for f in forecasts])


def ensemble_member_mse(truth: np.ndarray, ensemble: ForecastEnsemble) -> np.ndarray:
    """(M, H) MSE of each kept member."""
    if ensemble.members is None:
        raise ConfigurationError("Ensemble was run without keeping members.")
    return np.array([horizon_mse(truth, m) for m in ensemble.members])


def _as_matrix(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return values.reshape(-1, 1) if values.ndim == 1 else values


def _check_shapes(truth: np.ndarray, forecasts: np.ndarray) -> None:
    if forecasts.ndim != 3 or truth.shape != forecasts.shape[1:]:
        raise SchemaError(
            f"Expected truth (T, n) and forecasts (H, T, n); got {truth.shape} and "
            f"{forecasts.shape}."
        )
