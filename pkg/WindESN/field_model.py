"""Square-root harmonic mean structure for positive space-time fields.

A raw field Z_t(s) (e.g. 10 m wind speed) is modeled as

    sqrt(Z_t(s)) = b0(s) + sum_k [b_k1(s) cos(2 pi t / T_k) + b_k2(s) sin(2 pi t / T_k)]
                   + gamma(s) * Y_t(s)

where Y_t(s) is a zero-mean residual with unit sample variance per location.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
import math
from typing import Iterable, Optional, Sequence, Tuple, Union
import warnings

import numpy as np
from scipy import stats

from WindESN.errors import DomainError, InvalidDataError, SchemaError, SingularDesignError, \
    WindEsnWarning

# One year, half a year, one day, twelve hours, eight hours (hourly data, no leap days)
DEFAULT_PERIODS: Tuple[float, ...] = (8760.0, 4380.0, 24.0, 12.0, 8.0)

# Residual standard deviations below this are treated as an exact fit
_MIN_SCALE = 1e-10

TimeIndex = Union[range, Sequence[int], np.ndarray]


@dataclass(frozen=True, slots=True)
class SpaceTimeField:
    """Values over (hourly time index x location list).

    Attributes:
        location_ids: Unique location identifiers, one per column.
        coords: (n, 2) array of (x, y) coordinates in degrees (longitude, latitude).
        values: (T, n) array, row ``i`` is time ``start + i``.
        start: Time index of the first row.
        units: Free-form units tag ("m/s", "residual", ...).
    """
    location_ids: Tuple[str, ...]
    coords: np.ndarray
    values: np.ndarray
    start: int = 0
    units: str = ""

    def __post_init__(self):
        ids = tuple(str(i) for i in self.location_ids)
        coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        object.__setattr__(self, "location_ids", ids)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "start", int(self.start))

        if len(set(ids)) != len(ids):
            raise SchemaError("Location ids must be unique.")
        if coords.shape[0] != len(ids):
            raise SchemaError(
                f"Got {coords.shape[0]} coordinate pairs for {len(ids)} location ids."
            )
        if values.ndim != 2 or values.shape[1] != len(ids):
            raise SchemaError(
                f"Value matrix shape {values.shape} does not match {len(ids)} locations."
            )

    @property
    def n_times(self) -> int:
        return self.values.shape[0]

    @property
    def n_locations(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.n_times)

    @property
    def end(self) -> int:
        """Last time index (inclusive)."""
        return self.start + self.n_times - 1

    def with_values(self, values: np.ndarray, *, start: Optional[int] = None,
                    units: Optional[str] = None) -> "SpaceTimeField":
        """Same locations, new value matrix."""
        return SpaceTimeField(
            self.location_ids, self.coords, values,
            start=self.start if start is None else start,
            units=self.units if units is None else units, )

    def subset_times(self, first: int, last: int) -> "SpaceTimeField":
        """Rows with time index in [first, last] (inclusive)."""
        if first < self.start or last > self.end or first > last:
            raise SchemaError(
                f"Time range [{first}, {last}] is outside the field range "
                f"[{self.start}, {self.end}]."
            )
        rows = slice(first - self.start, last - self.start + 1)
        return self.with_values(self.values[rows], start=first)

    def subset_locations(self, indices: Iterable[int]) -> "SpaceTimeField":
        idx = np.asarray(list(indices), dtype=int)
        return SpaceTimeField(
            tuple(self.location_ids[i] for i in idx), self.coords[idx], self.values[:, idx],
            start=self.start, units=self.units, )

    def require_finite(self) -> None:
        if not np.all(np.isfinite(self.values)):
            bad = int(np.count_nonzero(~np.isfinite(self.values)))
            raise InvalidDataError(f"Field contains {bad} non-finite values.")


@dataclass(frozen=True, slots=True)
class HarmonicModel:
    """Fitted per-location harmonic regression on the square-root scale.

    Attributes:
        periods: K distinct positive periods in hours.
        location_ids: Locations the model was fitted on.
        intercept: (n,) b0 per location.
        coefficients: (n, K, 2) cosine/sine coefficient pairs per location.
        scale: (n,) gamma per location, strictly positive.
    """
    periods: Tuple[float, ...]
    location_ids: Tuple[str, ...]
    intercept: np.ndarray
    coefficients: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        periods = tuple(float(p) for p in self.periods)
        _validate_periods(periods)
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "location_ids", tuple(str(i) for i in self.location_ids))
        n, k = len(self.location_ids), len(periods)
        intercept = np.asarray(self.intercept, dtype=float).reshape(n)
        coefficients = np.asarray(self.coefficients, dtype=float).reshape(n, k, 2)
        scale = np.asarray(self.scale, dtype=float).reshape(n)
        if np.any(~(scale > 0)):
            raise DomainError("Harmonic scale gamma must be strictly positive at every location.")
        object.__setattr__(self, "intercept", intercept)
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "scale", scale)

    @property
    def n_harmonics(self) -> int:
        return len(self.periods)

    def mean_structure(self, times: TimeIndex) -> np.ndarray:
        """(T, n) harmonic mean on the square-root scale."""
        design = harmonic_design(np.asarray(times), self.periods)
        beta = np.concatenate(
            [self.intercept[None, :], self.coefficients.reshape(len(self.location_ids), -1).T],
            axis=0, )
        return design @ beta


@dataclass(frozen=True, slots=True)
class Periodogram:
    """Amplitude spectrum of a series indexed by period (hours)."""
    periods: np.ndarray
    amplitudes: np.ndarray

    def peaks(self, count: int) -> list[tuple[float, float]]:
        """The ``count`` largest amplitudes as (period, amplitude), largest first."""
        order = np.argsort(self.amplitudes, kind="stable")[::-1][:count]
        return [(float(self.periods[i]), float(self.amplitudes[i])) for i in order]

    def as_pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.periods.tolist(), self.amplitudes.tolist()))


def periodogram(series: Sequence[float]) -> Periodogram:
    """Discrete Fourier amplitude spectrum of a centered series.

    Bins k = 1..n//2 are returned with period n/k. Amplitudes are scaled so that
    the sum of squared amplitudes equals the sum of squared centered values.

    Raises:
        InvalidDataError: If the series is shorter than 2 or not finite.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 2:
        raise InvalidDataError(f"Periodogram needs at least 2 values, got {x.size}.")
    if not np.all(np.isfinite(x)):
        raise InvalidDataError("Periodogram input contains non-finite values.")

    n = x.size
    spectrum = np.fft.rfft(x - x.mean())
    k = np.arange(1, n // 2 + 1)
    weight = np.full(k.size, 2.0)
    if n % 2 == 0:
        weight[-1] = 1.0  # Nyquist bin appears once in the full spectrum
    amplitudes = np.sqrt(weight / n) * np.abs(spectrum[k])
    return Periodogram(periods=n / k, amplitudes=amplitudes)


def harmonic_design(times: np.ndarray, periods: Sequence[float]) -> np.ndarray:
    """Design matrix [1, cos(2 pi t/T_1), sin(2 pi t/T_1), ...] with one row per time."""
    t = np.asarray(times, dtype=float).reshape(-1, 1)
    cols = [np.ones_like(t)]
    for period in periods:
        angle = 2.0 * math.pi * t / float(period)
        cols.append(np.cos(angle))
        cols.append(np.sin(angle))
    return np.hstack(cols)


def fit_harmonics(field: SpaceTimeField,
                  periods: Sequence[float] = DEFAULT_PERIODS) -> HarmonicModel:
    """Least-squares harmonic fit of sqrt(field) at every location.

    All locations share the same design, so the fit is a single multi-RHS solve;
    columns are independent per location.

    Raises:
        DomainError: On negative field values.
        SingularDesignError: If a period makes the design rank deficient.
    """
    periods = tuple(float(p) for p in periods)
    _validate_periods(periods)
    field.require_finite()
    if np.any(field.values < 0):
        raise DomainError(
            f"Field has {int(np.count_nonzero(field.values < 0))} negative values; "
            f"the square-root transform needs values >= 0."
        )
    n_coef = 2 * len(periods) + 1
    if field.n_times <= n_coef:
        raise SingularDesignError(
            f"Need more than {n_coef} time steps for {len(periods)} harmonics, "
            f"got {field.n_times}."
        )

    design = harmonic_design(field.times, periods)
    _check_design_rank(design, periods)

    root = np.sqrt(field.values)
    beta, *_ = np.linalg.lstsq(design, root, rcond=None)
    resid = root - design @ beta

    scale = resid.std(axis=0, ddof=1)
    exact = scale <= _MIN_SCALE
    if np.any(exact):
        warnings.warn(
            f"{int(exact.sum())} locations are fitted exactly; their scale is set to 1.",
            WindEsnWarning, stacklevel=2, )
        scale = np.where(exact, 1.0, scale)

    return HarmonicModel(
        periods=periods, location_ids=field.location_ids, intercept=beta[0],
        coefficients=beta[1:].T.reshape(field.n_locations, len(periods), 2), scale=scale, )


def detrend(field: SpaceTimeField, model: HarmonicModel) -> SpaceTimeField:
    """Residuals Y = (sqrt(Z) - mean structure) / gamma."""
    _check_locations(field, model)
    field.require_finite()
    if np.any(field.values < 0):
        raise DomainError("Cannot detrend a field with negative values.")
    mean = model.mean_structure(field.times)
    resid = (np.sqrt(field.values) - mean) / model.scale[None, :]
    return field.with_values(resid, units="residual")


def retrend_with_count(residuals: SpaceTimeField, model: HarmonicModel,
                       times: Optional[TimeIndex] = None) -> tuple[SpaceTimeField, int]:
    """Invert :func:`detrend`; also return how many values were truncated at zero.

    Negative values of ``mean + gamma * Y`` are set to 0 before squaring.
    """
    _check_locations(residuals, model)
    if times is None:
        times = residuals.times
    times = np.asarray(times, dtype=int)
    if times.size != residuals.n_times:
        raise SchemaError(
            f"Got {times.size} time indices for {residuals.n_times} residual rows."
        )
    root = model.mean_structure(times) + model.scale[None, :] * residuals.values
    negative = root < 0
    truncated = int(np.count_nonzero(negative))
    if truncated:
        warnings.warn(
            f"{truncated} negative square-root values were truncated to 0 during retrend.",
            WindEsnWarning, stacklevel=2, )
        root = np.where(negative, 0.0, root)
    start = int(times[0]) if times.size else residuals.start
    return residuals.with_values(root ** 2, start=start, units=""), truncated


def retrend(residuals: SpaceTimeField, model: HarmonicModel,
            times: Optional[TimeIndex] = None) -> SpaceTimeField:
    """Z = (mean structure + gamma * Y)^2 on the original scale."""
    out, _ = retrend_with_count(residuals, model, times)
    return out


@dataclass(frozen=True, slots=True)
class ScalingDiagnostics:
    """Per-location scale plus pooled residual normality summaries."""
    location_ids: Tuple[str, ...]
    scale: np.ndarray
    histogram_counts: np.ndarray
    histogram_edges: np.ndarray
    qq_theoretical: np.ndarray
    qq_sample: np.ndarray
    extra: dict = dc_field(default_factory=dict)


def scaling_diagnostics(residuals: SpaceTimeField, model: HarmonicModel, *, bins: int = 50,
                        qq_points: int = 200) -> ScalingDiagnostics:
    """Histogram and normal Q-Q pairs of pooled residuals, with the fitted gamma map."""
    _check_locations(residuals, model)
    pooled = residuals.values[np.isfinite(residuals.values)].ravel()
    if pooled.size == 0:
        raise InvalidDataError("No finite residuals to summarize.")
    counts, edges = np.histogram(pooled, bins=bins)
    probs = (np.arange(1, qq_points + 1) - 0.5) / qq_points
    return ScalingDiagnostics(
        location_ids=model.location_ids, scale=model.scale.copy(), histogram_counts=counts,
        histogram_edges=edges, qq_theoretical=stats.norm.ppf(probs),
        qq_sample=np.quantile(pooled, probs),
        extra={"skewness": float(stats.skew(pooled)), "kurtosis": float(stats.kurtosis(pooled))},
    )


def _validate_periods(periods: Tuple[float, ...]) -> None:
    if any(not (p > 0) or not math.isfinite(p) for p in periods):
        raise DomainError(f"Periods must be positive and finite, got {periods}.")
    if len(set(periods)) != len(periods):
        raise DomainError(f"Periods must be distinct, got {periods}.")


def _check_design_rank(design: np.ndarray, periods: Tuple[float, ...]) -> None:
    """Name the first period whose columns make the design singular.

    A period at or beyond the record length leaves cos nearly constant, so it is
    collinear with the intercept even when the numerical rank looks full.
    """
    n = design.shape[0]
    for k, period in enumerate(periods):
        if period >= n:
            raise SingularDesignError(
                f"periods[{k}]={period} is not shorter than the {n}-step record; "
                f"the harmonic design is singular."
            )
    if np.linalg.matrix_rank(design) == design.shape[1]:
        return
    for k, period in enumerate(periods):
        cols = design[:, :2 * k + 3]
        if np.linalg.matrix_rank(cols) < cols.shape[1]:
            raise SingularDesignError(
                f"periods[{k}]={period} makes the harmonic design singular for "
                f"{design.shape[0]} time steps."
            )
    raise SingularDesignError("Harmonic design matrix is rank deficient.")


def _check_locations(field: SpaceTimeField, model: HarmonicModel) -> None:
    if field.location_ids != model.location_ids:
        raise SchemaError(
            f"Field locations ({field.n_locations}) do not match the harmonic model "
            f"locations ({len(model.location_ids)})."
        )
