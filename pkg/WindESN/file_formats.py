"""On-disk formats for fields, fitted models and forecast artifacts.

SpaceTimeFile, binary (default, any extension but ``.csv``):

    bytes 0..7    magic b"WINDSTF1"
    bytes 8..11   header length L, little-endian uint32
    next L bytes  UTF-8 JSON header
    rest          T x n little-endian float64 values, row-major (time by location)

SpaceTimeFile, text (``.csv``): '#'-prefixed YAML header lines with the same keys,
then a CSV table whose first column is ``time`` and whose remaining columns are
location ids.

Header keys: format, version, start, step_hours (always 1), n_times, units,
missing (sentinel value or null), locations (list of {id, x, y}).
"""
from __future__ import annotations

import io
import json
from pathlib import Path
import struct
from typing import Dict, List, Optional, Sequence, Tuple, Union
import zipfile

import numpy as np
import pandas as pd
from scipy import sparse
import yaml

from WindESN.errors import InvalidDataError, SchemaError
from WindESN.esn import EsnModel, EsnSpec, ReadoutMap, ReservoirMatrices, generate_matrices
from WindESN.field_model import HarmonicModel, SpaceTimeField
from WindESN.forecast import CalibrationQuantiles, ForecastEnsemble
from WindESN.spatial import CovarianceModel, KnotSet, MixtureComponent

FIELD_MAGIC = b"WINDSTF1"
FIELD_FORMAT = "wind-esn-field"
MODEL_FORMAT = "wind-esn-model"
FORMAT_VERSION = 1
# Fixed entry timestamp so identical arrays give identical files
_ZIP_DATE_TIME = (1980, 1, 1, 0, 0, 0)

PathLike = Union[str, Path]


# ===================================================================
# SpaceTimeFile
# ===================================================================

def _field_header(field: SpaceTimeField, missing: Optional[float]) -> Dict:
    return {
        "format": FIELD_FORMAT,
        "version": FORMAT_VERSION,
        "start": int(field.start),
        "step_hours": 1,
        "n_times": int(field.n_times),
        "units": field.units,
        "missing": missing,
        "locations": [{"id": lid, "x": float(x), "y": float(y)}
                      for lid, (x, y) in zip(field.location_ids, field.coords)],
    }


def _field_from_header(header: Dict, values: np.ndarray, source: Path) -> SpaceTimeField:
    if header.get("format") != FIELD_FORMAT:
        raise SchemaError(f"{source} is not a {FIELD_FORMAT} file.")
    if int(header.get("version", -1)) > FORMAT_VERSION:
        raise SchemaError(f"{source} has unsupported version {header.get('version')}.")
    if int(header.get("step_hours", 1)) != 1:
        raise SchemaError(f"{source} declares step_hours={header['step_hours']}; only 1 is supported.")
    locs = header.get("locations") or []
    n_times = int(header["n_times"])
    if values.size != n_times * len(locs):
        raise SchemaError(
            f"{source} payload holds {values.size} values; header declares "
            f"{n_times} x {len(locs)}."
        )
    values = values.reshape(n_times, len(locs))
    missing = header.get("missing")
    if missing is not None:
        values = np.where(values == float(missing), np.nan, values)
    elif np.isnan(values).any():
        raise SchemaError(f"{source} contains NaN but declares no missing-value sentinel.")
    return SpaceTimeField(location_ids=tuple(str(l["id"]) for l in locs),
                          coords=np.array([[l["x"], l["y"]] for l in locs], dtype=float),
                          values=values, start=int(header.get("start", 0)),
                          units=str(header.get("units", "")))


def write_field(path: PathLike, field: SpaceTimeField, missing: Optional[float] = None) -> Path:
    """Write a SpaceTimeFile; NaNs require a ``missing`` sentinel."""
    path = Path(path)
    values = field.values.astype("<f8")
    if np.isnan(values).any():
        if missing is None:
            raise InvalidDataError("Field has NaN values; pass a missing-value sentinel.")
        values = np.where(np.isnan(values), float(missing), values)
    header = _field_header(field, missing)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".csv":
        if any("#" in lid or "," in lid for lid in field.location_ids):
            raise SchemaError("Location ids in CSV fields may not contain '#' or ','.")
        lines = ["# " + ln for ln in
                 yaml.safe_dump(header, sort_keys=False, default_flow_style=None).splitlines()]
        table = pd.DataFrame(values, columns=list(field.location_ids))
        table.insert(0, "time", np.arange(field.start, field.start + field.n_times))
        with path.open("w", encoding="utf-8", newline="") as f:
            f.write("\n".join(lines) + "\n")
            table.to_csv(f, index=False, float_format="%.17g")
    else:
        blob = json.dumps(header).encode("utf-8")
        with path.open("wb") as f:
            f.write(FIELD_MAGIC)
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            f.write(np.ascontiguousarray(values).tobytes())
    return path


def read_field(path: PathLike) -> SpaceTimeField:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"Field file not found: {path}")
    if path.suffix.lower() == ".csv":
        text = path.read_text(encoding="utf-8")
        header_lines = [ln[2:] if ln.startswith("# ") else ln[1:]
                        for ln in text.splitlines() if ln.startswith("#")]
        try:
            header = yaml.safe_load("\n".join(header_lines)) or {}
        except yaml.YAMLError as e:
            raise SchemaError(f"Malformed field header in {path}: {e}") from e
        table = pd.read_csv(io.StringIO(text), comment="#", dtype={"time": np.int64})
        ids = [str(l["id"]) for l in header.get("locations") or []]
        if list(table.columns[1:]) != ids:
            raise SchemaError(f"{path} columns do not match the header location ids.")
        times = table["time"].to_numpy()
        start = int(header.get("start", 0))
        if not np.array_equal(times, np.arange(start, start + times.size)):
            raise SchemaError(f"{path} time column is not contiguous from {start}.")
        values = table[ids].to_numpy(dtype=float).ravel()
        return _field_from_header(header, values, path)

    data = path.read_bytes()
    if data[:8] != FIELD_MAGIC or len(data) < 12:
        raise SchemaError(f"{path} is not a binary SpaceTimeFile.")
    (n,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SchemaError(f"Malformed field header in {path}: {e}") from e
    payload = data[12 + n:]
    if len(payload) % 8:
        raise SchemaError(f"{path} payload is not a whole number of float64 values.")
    return _field_from_header(header, np.frombuffer(payload, dtype="<f8").astype(float), path)


# ===================================================================
# Harmonic model
# ===================================================================

def save_harmonics(path: PathLike, model: HarmonicModel) -> Path:
    path = Path(path)
    header = {"format": "wind-esn-harmonics", "version": FORMAT_VERSION,
              "periods": list(model.periods), "location_ids": list(model.location_ids)}
    _savez(path, header, intercept=model.intercept, coefficients=model.coefficients,
           scale=model.scale)
    return path


def load_harmonics(path: PathLike) -> HarmonicModel:
    header, arrays = _loadz(path, "wind-esn-harmonics")
    return HarmonicModel(periods=tuple(header["periods"]),
                         location_ids=tuple(header["location_ids"]),
                         intercept=arrays["intercept"], coefficients=arrays["coefficients"],
                         scale=arrays["scale"])


# ===================================================================
# Knots
# ===================================================================

def write_knots(path: PathLike, knots: KnotSet, field: SpaceTimeField) -> Path:
    """CSV with columns index, location_id, x, y, tag."""
    knots.validate_for(field.n_locations)
    idx = list(knots.indices)
    table = pd.DataFrame({
        "index": idx,
        "location_id": [field.location_ids[i] for i in idx],
        "x": field.coords[idx, 0] if idx else [],
        "y": field.coords[idx, 1] if idx else [],
        "tag": list(knots.tags),
    })
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.17g")
    return path


def read_knots(path: PathLike, field: Optional[SpaceTimeField] = None) -> KnotSet:
    """Read a knots file; with ``field`` the location ids are checked against it."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"Knots file not found: {path}")
    table = pd.read_csv(path, dtype={"location_id": str, "tag": str})
    missing = {"index", "tag"} - set(table.columns)
    if missing:
        raise SchemaError(f"Knots file {path} is missing columns {sorted(missing)}.")
    knots = KnotSet(indices=tuple(table["index"].astype(int)), tags=tuple(table["tag"]))
    if field is not None:
        knots.validate_for(field.n_locations)
        if "location_id" in table.columns:
            expected = [field.location_ids[i] for i in knots.indices]
            if list(table["location_id"]) != expected:
                raise SchemaError(f"Knots file {path} does not match the field's locations.")
    return knots


# ===================================================================
# Covariance model
# ===================================================================

def covariance_to_dict(model: CovarianceModel) -> Dict:
    return {
        "format": "wind-esn-covariance",
        "version": FORMAT_VERSION,
        "bandwidth": float(model.bandwidth),
        "components": [
            {"center": [float(v) for v in c.center], "sill": float(c.sill),
             "smoothness": float(c.smoothness),
             "kernel": [[float(v) for v in row] for row in c.kernel],
             "nugget": float(c.nugget)}
            for c in model.components
        ],
    }


def covariance_from_dict(data: Dict) -> CovarianceModel:
    if not isinstance(data, dict) or data.get("format") != "wind-esn-covariance":
        raise SchemaError("Not a wind-esn-covariance document.")
    try:
        comps = tuple(MixtureComponent(center=np.array(c["center"]), sill=float(c["sill"]),
                                       smoothness=float(c["smoothness"]),
                                       kernel=np.array(c["kernel"]),
                                       nugget=float(c.get("nugget", 0.0)))
                      for c in data["components"])
    except (KeyError, TypeError) as e:
        raise SchemaError(f"Malformed covariance component: {e}") from e
    return CovarianceModel(components=comps, bandwidth=float(data.get("bandwidth", 3.0)))


def write_covariance(path: PathLike, model: CovarianceModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        yaml.safe_dump(covariance_to_dict(model), f, sort_keys=False)
    return path


def read_covariance(path: PathLike) -> CovarianceModel:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"Covariance file not found: {path}")
    with path.open("r", encoding="utf-8") as f:
        try:
            return covariance_from_dict(yaml.safe_load(f))
        except yaml.YAMLError as e:
            raise SchemaError(f"Malformed covariance file {path}: {e}") from e


# ===================================================================
# ESN models
# ===================================================================

def save_models(path: PathLike, models: Sequence[EsnModel], *, store_matrices: bool = False
                ) -> Path:
    """Save ensemble members; reservoirs are regenerated from their seeds unless stored.

    Only tanh activations are supported.
    """
    if not models:
        raise SchemaError("No models to save.")
    if any(m.activation is not np.tanh for m in models):
        raise SchemaError("Only tanh reservoirs can be saved.")
    header = {
        "format": MODEL_FORMAT, "version": FORMAT_VERSION,
        "specs": [m.spec.to_dict() for m in models],
        "input_dim": int(models[0].matrices.input_dim),
        "activation": "tanh",
        "stored_matrices": bool(store_matrices),
    }
    arrays = {"B": np.stack([m.readout_map.B for m in models]),
              "spectral_radius": np.array([m.matrices.spectral_radius for m in models])}
    if store_matrices:
        for i, m in enumerate(models):
            for name, mat in (("W", m.matrices.W), ("U", m.matrices.U)):
                csr = sparse.csr_array(mat)
                arrays[f"{name}{i}_data"] = csr.data
                arrays[f"{name}{i}_indices"] = csr.indices
                arrays[f"{name}{i}_indptr"] = csr.indptr
                arrays[f"{name}{i}_shape"] = np.array(csr.shape)
    _savez(Path(path), header, **arrays)
    return Path(path)


def load_models(path: PathLike) -> List[EsnModel]:
    """Load ensemble members saved by ``save_models``.

    Raises:
        SchemaError: If a regenerated reservoir does not match its saved spectral radius.
    """
    header, arrays = _loadz(path, MODEL_FORMAT)
    models = []
    for i, spec_dict in enumerate(header["specs"]):
        spec = EsnSpec(**spec_dict)
        radius = float(arrays["spectral_radius"][i])
        if header.get("stored_matrices"):
            W, U = (sparse.csr_array((arrays[f"{n}{i}_data"], arrays[f"{n}{i}_indices"],
                                      arrays[f"{n}{i}_indptr"]),
                                     shape=tuple(arrays[f"{n}{i}_shape"])) for n in ("W", "U"))
            mats = ReservoirMatrices(W=W, U=U, spectral_radius=radius)
        else:
            mats = generate_matrices(spec, int(header["input_dim"]))
            if not np.isclose(mats.spectral_radius, radius, rtol=1e-8, atol=1e-12):
                raise SchemaError(
                    f"Regenerated reservoir {i} (seed {spec.seed}) has spectral radius "
                    f"{mats.spectral_radius:.12g}, saved {radius:.12g}."
                )
        models.append(EsnModel(spec=spec, matrices=mats, readout_map=ReadoutMap(arrays["B"][i])))
    return models


# ===================================================================
# Forecasts and calibration
# ===================================================================

def save_forecast(path: PathLike, ensemble: ForecastEnsemble,
                  location_ids: Sequence[str] = ()) -> Path:
    header = {"format": "wind-esn-forecast", "version": FORMAT_VERSION,
              "horizons": list(ensemble.horizons), "seeds": list(ensemble.seeds),
              "location_ids": list(location_ids)}
    arrays = {"times": ensemble.times, "mean": ensemble.mean}
    if ensemble.members is not None:
        arrays["members"] = ensemble.members
    if ensemble.reconstructed is not None:
        arrays["reconstructed"] = ensemble.reconstructed
    _savez(Path(path), header, **arrays)
    return Path(path)


def load_forecast(path: PathLike) -> Tuple[ForecastEnsemble, Tuple[str, ...]]:
    header, arrays = _loadz(path, "wind-esn-forecast")
    ens = ForecastEnsemble(horizons=tuple(header["horizons"]), times=arrays["times"],
                           mean=arrays["mean"], members=arrays.get("members"),
                           seeds=tuple(header["seeds"]),
                           reconstructed=arrays.get("reconstructed"))
    return ens, tuple(header.get("location_ids", ()))


def save_calibration(path: PathLike, quantiles: CalibrationQuantiles,
                     location_ids: Sequence[str] = ()) -> Path:
    header = {"format": "wind-esn-calibration", "version": FORMAT_VERSION,
              "horizons": list(quantiles.horizons), "location_ids": list(location_ids)}
    _savez(Path(path), header, probabilities=quantiles.probabilities,
           quantiles=quantiles.quantiles)
    return Path(path)


def load_calibration(path: PathLike) -> Tuple[CalibrationQuantiles, Tuple[str, ...]]:
    header, arrays = _loadz(path, "wind-esn-calibration")
    q = CalibrationQuantiles(horizons=tuple(header["horizons"]),
                             probabilities=arrays["probabilities"], quantiles=arrays["quantiles"])
    return q, tuple(header.get("location_ids", ()))


# ===================================================================
# npz helpers
# ===================================================================

def _savez(path: Path, header: Dict, **arrays: np.ndarray) -> None:
    """Compressed npz with a JSON header entry, readable by np.load."""
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = {"header": np.array(json.dumps(header, sort_keys=True)), **arrays}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, value in entries.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_DATE_TIME)
            info.compress_type = zipfile.ZIP_DEFLATED
            with zf.open(info, "w", force_zip64=True) as f:
                np.lib.format.write_array(f, np.asanyarray(value), allow_pickle=False)


def _loadz(path: PathLike, fmt: str) -> Tuple[Dict, Dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"File not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            arrays = {k: data[k] for k in data.files if k != "header"}
    except (OSError, ValueError, KeyError) as e:
        raise SchemaError(f"{path} is not a readable {fmt} file: {e}") from e
    if header.get("format") != fmt:
        raise SchemaError(f"{path} holds '{header.get('format')}', expected '{fmt}'.")
    if int(header.get("version", -1)) > FORMAT_VERSION:
        raise SchemaError(f"{path} has unsupported version {header.get('version')}.")
    return header, arrays
