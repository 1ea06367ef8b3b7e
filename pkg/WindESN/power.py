"""Hub-height extrapolation, turbine power curves and absolute energy error.

Power curve zones: 0 below cut-in, piecewise linear between cut-in and rated
speed, rated power up to and including cut-out, 0 above cut-out.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from WindESN.errors import ConfigurationError, DomainError, SchemaError
from WindESN.field_model import SpaceTimeField
from WindESN.file_formats import read_field

DEFAULT_ALPHA = 1.0 / 7.0
REFERENCE_HEIGHT = 10.0
DEFAULT_PRICE = 0.025  # per kW h

SHIPPED_CURVES = {
    "synthetic-3300kw-84m": "synthetic_3300kw_84m.csv",
    "synthetic-2750kw-75m": "synthetic_2750kw_75m.csv",
}

Alpha = Union[float, np.ndarray]


@dataclass(frozen=True)
class PowerCurve:
    """Turbine power curve with curve points covering [cut_in, rated_speed].

    Missing endpoints are added: (cut_in, 0) and (rated_speed, rated_power).
    """
    cut_in: float
    rated_speed: float
    cut_out: float
    rated_power: float
    speeds: np.ndarray
    powers: np.ndarray
    name: str = ""

    def __post_init__(self):
        if not 0 < self.cut_in < self.rated_speed < self.cut_out:
            raise ConfigurationError(
                f"Power curve needs 0 < cut_in < rated_speed < cut_out, got "
                f"{self.cut_in}, {self.rated_speed}, {self.cut_out}."
            )
        if not self.rated_power > 0:
            raise ConfigurationError(f"rated_power must be > 0, got {self.rated_power}.")
        speeds = np.asarray(self.speeds, dtype=float)
        powers = np.asarray(self.powers, dtype=float)
        if speeds.shape != powers.shape or speeds.ndim != 1:
            raise SchemaError("Power curve speeds and powers must be equal-length vectors.")
        inside = (speeds >= self.cut_in) & (speeds <= self.rated_speed)
        if not np.all(inside):
            bad = speeds[~inside][0]
            raise ConfigurationError(
                f"Curve point speed {bad} is outside [{self.cut_in}, {self.rated_speed}]."
            )
        if speeds.size == 0 or speeds[0] > self.cut_in:
            speeds, powers = np.r_[self.cut_in, speeds], np.r_[0.0, powers]
        if speeds[-1] < self.rated_speed:
            speeds, powers = np.r_[speeds, self.rated_speed], np.r_[powers, self.rated_power]
        if np.any(np.diff(speeds) <= 0):
            raise ConfigurationError("Power curve speeds must be strictly increasing.")
        if np.any(np.diff(powers) < 0) or powers[0] < 0 or powers[-1] > self.rated_power:
            raise ConfigurationError(
                "Power curve powers must be nondecreasing within [0, rated_power]."
            )
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "powers", powers)


@dataclass(frozen=True)
class TurbineSite:
    """A turbine at one location; ``alpha`` is a constant or a per-time series.

    A series with ``alpha_start`` set is indexed by absolute time, row ``i`` being
    time ``alpha_start + i``; without it the series must line up with the speeds.
    """
    location_id: str
    hub_height: float
    curve: PowerCurve
    alpha: Alpha = DEFAULT_ALPHA
    alpha_start: Optional[int] = None

    def __post_init__(self):
        if not self.hub_height > REFERENCE_HEIGHT:
            raise ConfigurationError(
                f"Hub height at {self.location_id} must exceed {REFERENCE_HEIGHT} m, "
                f"got {self.hub_height}."
            )
        if not np.all(np.isfinite(self.alpha)):
            raise ConfigurationError(f"Shear exponent at {self.location_id} is not finite.")

    def shear_at(self, times: Optional[np.ndarray] = None) -> Alpha:
        """Shear exponent at absolute time indices ``times``.

        Raises:
            SchemaError: If the series does not cover every requested time.
        """
        if np.ndim(self.alpha) == 0 or times is None or self.alpha_start is None:
            return self.alpha
        series = np.asarray(self.alpha, dtype=float)
        rows = np.asarray(times, dtype=np.int64) - self.alpha_start
        if rows.size and (rows.min() < 0 or rows.max() >= series.size):
            last = self.alpha_start + series.size - 1
            raise SchemaError(
                f"Shear series at {self.location_id} covers times {self.alpha_start}..{last}, "
                f"not {int(np.min(times))}..{int(np.max(times))}."
            )
        return series[rows]


def to_hub_height(speed: np.ndarray, hub_height: float, alpha: Alpha = DEFAULT_ALPHA
                  ) -> np.ndarray:
    """Power law Z * (h / 10) ** alpha."""
    if not hub_height > 0:
        raise DomainError(f"Hub height must be > 0, got {hub_height}.")
    return np.asarray(speed, dtype=float) * np.power(hub_height / REFERENCE_HEIGHT, alpha)


def to_power(speed: np.ndarray, curve: PowerCurve) -> np.ndarray:
    """Electrical power (kW) at hub-height ``speed`` (m/s)."""
    s = np.asarray(speed, dtype=float)
    out = np.zeros_like(s)
    ramp = (s >= curve.cut_in) & (s < curve.rated_speed)
    out[ramp] = np.interp(s[ramp], curve.speeds, curve.powers)
    out[(s >= curve.rated_speed) & (s <= curve.cut_out)] = curve.rated_power
    out[np.isnan(s)] = np.nan
    return out


def site_power(speed_10m: np.ndarray, site: TurbineSite, times: Optional[np.ndarray] = None
               ) -> np.ndarray:
    return to_power(to_hub_height(speed_10m, site.hub_height, site.shear_at(times)), site.curve)


def energy_error(true_power: np.ndarray, forecast_power: np.ndarray, step: float = 1.0
                 ) -> float:
    """Sum of |forecast - truth| * step over the pairs where both are finite (kW h)."""
    a = np.asarray(true_power, dtype=float)
    b = np.asarray(forecast_power, dtype=float)
    if a.shape != b.shape:
        raise SchemaError(f"Power series shapes differ: {a.shape} and {b.shape}.")
    diff = np.abs(b - a)
    return float(np.sum(diff[np.isfinite(diff)]) * step)


def quantile_energy_error(true_speed: np.ndarray, quantile_speeds: Mapping[float, np.ndarray],
                          site: TurbineSite, step: float = 1.0,
                          times: Optional[np.ndarray] = None) -> Dict[float, float]:
    """Energy error of each quantile forecast after converting speeds to power.

    Args:
        true_speed: Observed 10 m wind speed series.
        quantile_speeds: {probability level: forecast 10 m speed series}.
        times: Absolute time indices of the series, used to align a shear series.
    """
    truth = site_power(true_speed, site, times)
    return {float(level): energy_error(truth, site_power(q, site, times), step)
            for level, q in sorted(quantile_speeds.items())}


def energy_cost(error_kwh: Union[float, np.ndarray], price: float = DEFAULT_PRICE):
    """Cost of an energy error at a constant price per kW h."""
    return np.asarray(error_kwh, dtype=float) * price if np.ndim(error_kwh) \
        else float(error_kwh) * price


def load_power_curve(path: Union[str, Path]) -> PowerCurve:
    """Read a curve file: '#'-prefixed YAML header then a 'speed,power' table.

    Header keys: cut_in, rated_speed, cut_out, rated_power and optionally name.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Power curve file not found: {path}")
    text = path.read_text(encoding="utf-8")
    header_lines = [ln.lstrip("#").strip() for ln in text.splitlines() if ln.startswith("#")]
    try:
        header = yaml.safe_load("\n".join(header_lines)) or {}
    except yaml.YAMLError as e:
        raise SchemaError(f"Malformed power curve header in {path}: {e}") from e
    missing = [k for k in ("cut_in", "rated_speed", "cut_out", "rated_power") if k not in header]
    if missing:
        raise SchemaError(f"Power curve {path} header is missing {', '.join(missing)}.")
    table = pd.read_csv(path, comment="#")
    if not {"speed", "power"} <= set(table.columns):
        raise SchemaError(f"Power curve {path} needs 'speed' and 'power' columns.")
    return PowerCurve(cut_in=float(header["cut_in"]), rated_speed=float(header["rated_speed"]),
                      cut_out=float(header["cut_out"]), rated_power=float(header["rated_power"]),
                      speeds=table["speed"].to_numpy(float), powers=table["power"].to_numpy(float),
                      name=str(header.get("name", path.stem)))


def shipped_curve(name: str) -> PowerCurve:
    """One of the synthetic example curves bundled with the package."""
    if name not in SHIPPED_CURVES:
        raise ConfigurationError(
            f"Unknown shipped curve '{name}'; choose from {sorted(SHIPPED_CURVES)}."
        )
    with resources.as_file(resources.files("WindESN") / "data" / SHIPPED_CURVES[name]) as p:
        return load_power_curve(p)


def resolve_curve(ref: str, base_dir: Optional[Path] = None) -> PowerCurve:
    """A shipped curve name, or a curve file path relative to ``base_dir``."""
    if ref in SHIPPED_CURVES:
        return shipped_curve(ref)
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    return load_power_curve(path)


def load_turbine_sites(path: Union[str, Path]) -> List[TurbineSite]:
    """Registry CSV with columns location_id, hub_height, curve and optional alpha.

    An alpha cell holds a number, nothing (the default exponent), or the path of a
    SpaceTimeFile, relative to the registry, whose column for the site's location id
    is a per-time shear series.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Turbine registry not found: {path}")
    table = pd.read_csv(path, dtype={"location_id": str})
    missing = {"location_id", "hub_height", "curve"} - set(table.columns)
    if missing:
        raise SchemaError(f"Turbine registry {path} is missing columns {sorted(missing)}.")
    curves: Dict[str, PowerCurve] = {}
    shear_fields: Dict[Path, SpaceTimeField] = {}
    sites = []
    for row in table.itertuples(index=False):
        ref = str(row.curve)
        if ref not in curves:
            curves[ref] = resolve_curve(ref, path.parent)
        alpha, alpha_start = _registry_alpha(getattr(row, "alpha", None), str(row.location_id),
                                             path.parent, shear_fields)
        sites.append(TurbineSite(location_id=str(row.location_id),
                                 hub_height=float(row.hub_height), curve=curves[ref],
                                 alpha=alpha, alpha_start=alpha_start))
    return sites


def _registry_alpha(cell, location_id: str, base_dir: Path,
                    shear_fields: Dict[Path, SpaceTimeField]) -> Tuple[Alpha, Optional[int]]:
    if cell is None or (not isinstance(cell, str) and pd.isna(cell)):
        return DEFAULT_ALPHA, None
    text = str(cell).strip()
    if not text:
        return DEFAULT_ALPHA, None
    try:
        return float(text), None
    except ValueError:
        pass
    source = Path(text)
    if not source.is_absolute():
        source = base_dir / source
    if source not in shear_fields:
        shear_fields[source] = read_field(source)
    field = shear_fields[source]
    if location_id not in field.location_ids:
        raise SchemaError(f"Shear series {source} has no column for location {location_id}.")
    return field.values[:, field.location_ids.index(location_id)].copy(), field.start
