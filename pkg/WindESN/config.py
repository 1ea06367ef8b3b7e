"""Experiment configuration: YAML loading, validation, overrides and serialization.

Supported YAML schema (top-level sections, all optional):

data:
  field: demo/field.wsf          # SpaceTimeFile with raw wind speed
  turbines: demo/turbines.csv    # optional turbine registry
  work_dir: run
splits:
  train_end: 1199                # last training time index (inclusive)
  validation_end: 1599           # last validation index; calibration uses this window
  test_end: null                 # null = end of data
harmonics:
  periods: [8760, 4380, 24, 12, 8]
knots:
  grid_step: 0.25
  speed_threshold: 6.0
  min_separation: 0.005
covariance:
  centers: 42
  radius: 3.0
  bandwidth: 3.0
  restarts: 3
  min_neighbors: 30
  seed: 0
esn:                              # EsnSpec fields
  reservoir_size: 2500
grid:                             # axis -> candidate values; budget caps evaluations
  n_h: [100, 200]
  lambda: [0.01, 0.1]
  budget: null
ensemble:
  members: 100
  horizons: [1, 2, 3]
calibration:
  levels: [0.95, 0.8, 0.6]
baselines:
  arima_p: [0, 1, 2, 3]
  arima_d: [0, 1]
  arima_q: [0, 1, 2, 3]
  var_orders: [1, 2, 3]
  n_eof: 10
power:
  curve: synthetic-3300kw-84m
  hub_height: 84
  alpha: 0.142857
  price: 0.025
  step_hours: 1.0
lorenz:
  etas: [0.2, 0.8, 1.4]
  replicates: 10
  methods: [esn, var, arima, persistence]
  members: 10
  n_sites: 5
  forcing: 8.0
  noise_sd: 1.0
seed: 0
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
import hashlib
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import yaml

from WindESN.cross_validation import EsnGrid
from WindESN.errors import ConfigurationError
from WindESN.esn import EsnSpec
from WindESN.field_model import DEFAULT_PERIODS
from WindESN.forecast import DEFAULT_LEVELS, HORIZONS
from WindESN.lorenz import STUDY_ETAS, STUDY_METHODS, LorenzConfig
from WindESN.power import DEFAULT_ALPHA, DEFAULT_PRICE

SECTIONS = ("data", "splits", "harmonics", "knots", "covariance", "esn", "grid", "ensemble",
            "calibration", "baselines", "power", "lorenz", "seed")


def _ints(v) -> Tuple[int, ...]:
    return tuple(int(x) for x in _as_list(v))


def _floats(v) -> Tuple[float, ...]:
    return tuple(float(x) for x in _as_list(v))


def _strs(v) -> Tuple[str, ...]:
    return tuple(str(x) for x in _as_list(v))


def _opt_int(v) -> Optional[int]:
    return None if v is None else int(v)


def _opt_str(v) -> Optional[str]:
    return None if v is None else str(v)


def _as_list(v) -> List:
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass(frozen=True, slots=True)
class DataConfig:
    field: Optional[str] = None
    turbines: Optional[str] = None
    work_dir: str = "run"


@dataclass(frozen=True, slots=True)
class SplitsConfig:
    train_end: int = 0
    validation_end: int = 0
    test_end: Optional[int] = None

    def __post_init__(self):
        if self.train_end or self.validation_end:
            if not 0 < self.train_end < self.validation_end:
                raise ConfigurationError(
                    f"splits.train_end must satisfy 0 < train_end < validation_end, got "
                    f"{self.train_end} and {self.validation_end}."
                )
            if self.test_end is not None and self.test_end <= self.validation_end:
                raise ConfigurationError(
                    f"splits.test_end must be after splits.validation_end, got {self.test_end}."
                )


@dataclass(frozen=True, slots=True)
class HarmonicsConfig:
    periods: Tuple[float, ...] = DEFAULT_PERIODS

    def __post_init__(self):
        if any(p <= 0 for p in self.periods):
            raise ConfigurationError(f"harmonics.periods must be positive, got {self.periods}.")
        if len(set(self.periods)) != len(self.periods):
            raise ConfigurationError(f"harmonics.periods must be distinct, got {self.periods}.")


@dataclass(frozen=True, slots=True)
class KnotsConfig:
    grid_step: float = 0.25
    speed_threshold: float = 6.0
    min_separation: float = 0.005

    def __post_init__(self):
        if not self.grid_step > 0:
            raise ConfigurationError(f"knots.grid_step must be > 0, got {self.grid_step}.")
        if not self.min_separation > 0:
            raise ConfigurationError(
                f"knots.min_separation must be > 0, got {self.min_separation}."
            )


@dataclass(frozen=True, slots=True)
class CovarianceConfig:
    centers: int = 42
    radius: float = 3.0
    bandwidth: float = 3.0
    restarts: int = 3
    min_neighbors: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.centers < 1:
            raise ConfigurationError(f"covariance.centers must be >= 1, got {self.centers}.")
        for name in ("radius", "bandwidth"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"covariance.{name} must be > 0.")
        if self.restarts < 1:
            raise ConfigurationError(f"covariance.restarts must be >= 1, got {self.restarts}.")


@dataclass(frozen=True, slots=True)
class GridConfig:
    grid: EsnGrid = EsnGrid()
    budget: Optional[int] = None

    def __post_init__(self):
        if self.budget is not None and self.budget < 1:
            raise ConfigurationError(f"grid.budget must be >= 1, got {self.budget}.")


@dataclass(frozen=True, slots=True)
class EnsembleConfig:
    members: int = 100
    horizons: Tuple[int, ...] = HORIZONS

    def __post_init__(self):
        if self.members < 1:
            raise ConfigurationError(f"ensemble.members must be >= 1, got {self.members}.")
        if not self.horizons or min(self.horizons) < 1:
            raise ConfigurationError(f"ensemble.horizons must be >= 1, got {self.horizons}.")


@dataclass(frozen=True, slots=True)
class CalibrationConfig:
    levels: Tuple[float, ...] = DEFAULT_LEVELS

    def __post_init__(self):
        bad = [lv for lv in self.levels if not 0 < lv < 1]
        if bad or not self.levels:
            raise ConfigurationError(f"calibration.levels must lie in (0, 1), got {self.levels}.")


@dataclass(frozen=True, slots=True)
class BaselinesConfig:
    arima_p: Tuple[int, ...] = (0, 1, 2, 3)
    arima_d: Tuple[int, ...] = (0, 1)
    arima_q: Tuple[int, ...] = (0, 1, 2, 3)
    var_orders: Tuple[int, ...] = (1, 2, 3)
    n_eof: int = 10

    def __post_init__(self):
        if any(d not in (0, 1, 2) for d in self.arima_d):
            raise ConfigurationError(f"baselines.arima_d must be 0, 1 or 2, got {self.arima_d}.")
        if any(p < 1 for p in self.var_orders):
            raise ConfigurationError(f"baselines.var_orders must be >= 1, got {self.var_orders}.")
        if self.n_eof < 1:
            raise ConfigurationError(f"baselines.n_eof must be >= 1, got {self.n_eof}.")


@dataclass(frozen=True, slots=True)
class PowerConfig:
    curve: str = "synthetic-3300kw-84m"
    hub_height: float = 84.0
    alpha: float = DEFAULT_ALPHA
    price: float = DEFAULT_PRICE
    step_hours: float = 1.0

    def __post_init__(self):
        if not self.hub_height > 10:
            raise ConfigurationError(f"power.hub_height must exceed 10 m, got {self.hub_height}.")
        if not self.step_hours > 0:
            raise ConfigurationError(f"power.step_hours must be > 0, got {self.step_hours}.")


@dataclass(frozen=True, slots=True)
class LorenzStudyConfig:
    etas: Tuple[float, ...] = STUDY_ETAS
    replicates: int = 50
    methods: Tuple[str, ...] = STUDY_METHODS
    members: int = 10
    simulation: LorenzConfig = LorenzConfig()

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigurationError(f"lorenz.replicates must be >= 1, got {self.replicates}.")
        unknown = sorted(set(self.methods) - set(STUDY_METHODS))
        if unknown:
            raise ConfigurationError(
                f"lorenz.methods contains unknown methods {unknown}; choose from {STUDY_METHODS}."
            )


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    data: DataConfig = DataConfig()
    splits: SplitsConfig = SplitsConfig()
    harmonics: HarmonicsConfig = HarmonicsConfig()
    knots: KnotsConfig = KnotsConfig()
    covariance: CovarianceConfig = CovarianceConfig()
    esn: EsnSpec = EsnSpec()
    grid: GridConfig = GridConfig()
    ensemble: EnsembleConfig = EnsembleConfig()
    calibration: CalibrationConfig = CalibrationConfig()
    baselines: BaselinesConfig = BaselinesConfig()
    power: PowerConfig = PowerConfig()
    lorenz: LorenzStudyConfig = LorenzStudyConfig()
    seed: int = 0

    @property
    def esn_spec(self) -> EsnSpec:
        """ESN settings with the base seed applied."""
        return self.esn.with_seed(self.seed)

    def grid_specs(self) -> List[EsnSpec]:
        return self.grid.grid.expand(self.esn_spec)


# Per-section converters: key -> callable applied to the YAML value
_CONVERTERS: Dict[str, Dict[str, Callable[[Any], Any]]] = {
    "data": {"field": _opt_str, "turbines": _opt_str, "work_dir": str},
    "splits": {"train_end": int, "validation_end": int, "test_end": _opt_int},
    "harmonics": {"periods": _floats},
    "knots": {"grid_step": float, "speed_threshold": float, "min_separation": float},
    "covariance": {"centers": int, "radius": float, "bandwidth": float, "restarts": int,
                   "min_neighbors": int, "seed": int},
    "esn": {"reservoir_size": int, "n_lags": int, "leak_rate": float, "spectral_scale": float,
            "w_scale": float, "u_scale": float, "w_density": float, "u_density": float,
            "ridge": float, "seed": int, "burn": int},
    "ensemble": {"members": int, "horizons": _ints},
    "calibration": {"levels": _floats},
    "baselines": {"arima_p": _ints, "arima_d": _ints, "arima_q": _ints, "var_orders": _ints,
                  "n_eof": int},
    "power": {"curve": str, "hub_height": float, "alpha": float, "price": float,
              "step_hours": float},
}
_LORENZ_STUDY = {"etas": _floats, "replicates": int, "methods": _strs, "members": int}
_LORENZ_SIM = {"n_sites": int, "forcing": float, "dt": float, "t_start": float, "t_end": float,
               "burn_in_steps": int, "noise_sd": float, "seed": int, "substeps": int}
_SECTION_TYPES = {"data": DataConfig, "splits": SplitsConfig, "harmonics": HarmonicsConfig,
                  "knots": KnotsConfig, "covariance": CovarianceConfig, "esn": EsnSpec,
                  "ensemble": EnsembleConfig, "calibration": CalibrationConfig,
                  "baselines": BaselinesConfig, "power": PowerConfig}


def load_yaml(path: Path) -> Dict:
    """Load a YAML file into a dict.

    Raises:
        ConfigurationError: If the file is missing or does not hold a mapping.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    with path.open("r", encoding="utf-8") as f:
        try:
            cfg = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Config {path} is not valid YAML: {e}") from e
    if cfg is None:
        return {}
    if not isinstance(cfg, dict):
        raise ConfigurationError("Config YAML must parse to a mapping at the top level.")
    return cfg


def apply_overrides(raw: Dict, overrides: Sequence[str]) -> Dict:
    """Apply ``section.key=value`` overrides; values are parsed as YAML scalars or lists."""
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"Override '{item}' must look like section.key=value.")
        parsed = yaml.safe_load(value) if value.strip() else None
        parts = key.strip().split(".")
        if len(parts) == 1:
            out[parts[0]] = parsed
            continue
        if len(parts) != 2:
            raise ConfigurationError(f"Override key '{key}' must have the form section.key.")
        section, name = parts
        current = out.get(section)
        if current is None:
            current = {}
        if not isinstance(current, dict):
            raise ConfigurationError(f"Config section '{section}' is not a mapping.")
        current = dict(current)
        current[name] = parsed
        out[section] = current
    return out


def parse_config(raw: Mapping) -> ExperimentConfig:
    """Validate a raw mapping into an ExperimentConfig.

    Raises:
        ConfigurationError: Naming the dotted key of the first invalid value.
    """
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(
            f"Unknown config section(s) {unknown}; expected any of {list(SECTIONS)}."
        )
    kwargs: Dict[str, Any] = {}
    for name, cls in _SECTION_TYPES.items():
        if raw.get(name) is not None:
            kwargs[name] = _build(cls, _convert(_mapping(raw, name), _CONVERTERS[name], name),
                                  name)

    if raw.get("grid") is not None:
        grid_raw = dict(_mapping(raw, "grid"))
        budget = grid_raw.pop("budget", None)
        try:
            axes = {k: _floats(v) if k not in ("n_h", "m", "reservoir_size", "n_lags")
                    else _ints(v) for k, v in grid_raw.items()}
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"grid values must be numbers: {e}") from e
        kwargs["grid"] = GridConfig(grid=EsnGrid.from_mapping(axes), budget=_opt_int(budget))

    if raw.get("lorenz") is not None:
        lor = dict(_mapping(raw, "lorenz"))
        study = {k: lor.pop(k) for k in list(lor) if k in _LORENZ_STUDY}
        sim = _convert(lor, _LORENZ_SIM, "lorenz")
        kwargs["lorenz"] = LorenzStudyConfig(
            simulation=_build(LorenzConfig, sim, "lorenz"),
            **_convert(study, _LORENZ_STUDY, "lorenz"))

    if raw.get("seed") is not None:
        try:
            kwargs["seed"] = int(raw["seed"])
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"seed must be an integer, got {raw['seed']!r}.") from e
        if kwargs["seed"] < 0:
            raise ConfigurationError(f"seed must be >= 0, got {kwargs['seed']}.")
    return ExperimentConfig(**kwargs)


def load_config(path: Optional[Path] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Load, override and validate; without a path only defaults and overrides apply."""
    raw = load_yaml(Path(path)) if path is not None else {}
    return parse_config(apply_overrides(raw, overrides))


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    """Plain-data view of ``config``; parse_config(config_to_dict(c)) == c."""
    out: Dict[str, Any] = {}
    for name in _SECTION_TYPES:
        out[name] = _plain(asdict(getattr(config, name)))
    out["grid"] = {**config.grid.grid.to_mapping(), "budget": config.grid.budget}
    lor = config.lorenz
    out["lorenz"] = {"etas": list(lor.etas), "replicates": lor.replicates,
                     "methods": list(lor.methods), "members": lor.members,
                     **_plain({k: v for k, v in asdict(lor.simulation).items()
                               if k in _LORENZ_SIM and k != "eta"})}
    out["seed"] = config.seed
    return out


def dump_config(config: ExperimentConfig, path: Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with Path(path).open("w", encoding="utf-8") as f:
        yaml.safe_dump(config_to_dict(config), f, sort_keys=False)


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the key-sorted YAML form of the resolved configuration."""
    text = yaml.safe_dump(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _mapping(raw: Mapping, name: str) -> Mapping:
    value = raw[name]
    if not isinstance(value, Mapping):
        raise ConfigurationError(f"Config section '{name}' must be a mapping.")
    return value


def _build(cls, kwargs: Dict, section: str):
    """Construct a section, prefixing validation messages with the section name."""
    try:
        return cls(**kwargs)
    except ConfigurationError as e:
        msg = str(e)
        if msg.startswith(f"{section}."):
            raise
        raise ConfigurationError(f"{section}.{msg}") from e


def _convert(values: Mapping, converters: Mapping[str, Callable], section: str) -> Dict:
    out = {}
    for key, value in values.items():
        if key not in converters:
            raise ConfigurationError(
                f"{section}.{key} is not a recognized key; expected one of "
                f"{sorted(converters)}."
            )
        try:
            out[key] = converters[key](value)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"{section}.{key} has an invalid value {value!r}.") from e
    return out


def _plain(d: Dict) -> Dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
