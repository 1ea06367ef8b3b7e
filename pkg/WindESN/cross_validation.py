"""Exhaustive grid search over ESN hyperparameters scored by horizon-1 validation MSE."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
import itertools
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from WindESN.errors import ConfigurationError
from WindESN.esn import EsnSpec
from WindESN.forecast import horizon_mse, run_ensemble
from WindESN.parallel import parallel_map

# Grid axis name -> EsnSpec field
GRID_AXES: Dict[str, str] = {
    "n_h": "reservoir_size",
    "m": "n_lags",
    "phi": "leak_rate",
    "delta": "spectral_scale",
    "lambda": "ridge",
    "a_w": "w_scale",
    "a_u": "u_scale",
    "pi_w": "w_density",
    "pi_u": "u_density",
}


@dataclass(frozen=True, slots=True)
class EsnGrid:
    """Candidate values for each tunable EsnSpec field; empty axes keep the base value."""
    reservoir_size: Tuple[int, ...] = ()
    n_lags: Tuple[int, ...] = ()
    leak_rate: Tuple[float, ...] = ()
    spectral_scale: Tuple[float, ...] = ()
    ridge: Tuple[float, ...] = ()
    w_scale: Tuple[float, ...] = ()
    u_scale: Tuple[float, ...] = ()
    w_density: Tuple[float, ...] = ()
    u_density: Tuple[float, ...] = ()

    @classmethod
    def from_mapping(cls, values: Dict[str, Sequence[float]]) -> "EsnGrid":
        """Build from axis names (``n_h``, ``lambda``...) or EsnSpec field names."""
        kwargs = {}
        names = {f.name for f in fields(cls)}
        for key, vals in values.items():
            name = GRID_AXES.get(key, key)
            if name not in names:
                raise ConfigurationError(
                    f"grid.{key} is not a tunable parameter; expected one of "
                    f"{sorted(GRID_AXES)}."
                )
            if isinstance(vals, (int, float)):
                vals = [vals]
            kwargs[name] = tuple(vals)
        return cls(**kwargs)

    def to_mapping(self) -> Dict[str, List[float]]:
        inverse = {v: k for k, v in GRID_AXES.items()}
        return {inverse[f.name]: list(getattr(self, f.name)) for f in fields(self)
                if getattr(self, f.name)}

    def expand(self, base: EsnSpec) -> List[EsnSpec]:
        """All combinations in axis order (last axis varies fastest).

        Raises:
            ConfigurationError: If a combination violates EsnSpec bounds.
        """
        axes = [(f.name, getattr(self, f.name) or (getattr(base, f.name),))
                for f in fields(self)]
        specs = []
        for combo in itertools.product(*(vals for _, vals in axes)):
            try:
                specs.append(replace(base, **{name: v for (name, _), v in zip(axes, combo)}))
            except ConfigurationError as e:
                raise ConfigurationError(f"Grid point {dict(zip([n for n, _ in axes], combo))} "
                                         f"is invalid: {e}") from e
        return specs


# Search grid used for the hourly wind field
WIND_FIELD_GRID = EsnGrid(
    reservoir_size=tuple(range(1000, 5001, 500)),
    n_lags=tuple(range(1, 11)),
    leak_rate=tuple(round(0.1 * k, 1) for k in range(1, 11)),
    spectral_scale=tuple(round(0.05 * k, 2) for k in range(1, 41)),
    ridge=(0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3),
    w_scale=(0.005, 0.01, 0.05, 0.1, 0.15),
    u_scale=(0.005, 0.01, 0.05, 0.1, 0.15),
    w_density=(0.005, 0.01, 0.05, 0.1, 0.15),
    u_density=(0.005, 0.01, 0.05, 0.1, 0.15),
)


@dataclass(frozen=True)
class CvResult:
    best: EsnSpec
    best_mse: float
    table: pd.DataFrame


def subsample_grid(specs: Sequence[EsnSpec], budget: Optional[int], seed: int = 0
                   ) -> List[Tuple[int, EsnSpec]]:
    """(grid index, spec) pairs, capped at ``budget`` by a seeded draw kept in grid order."""
    indexed = list(enumerate(specs))
    if budget is None or budget >= len(indexed):
        return indexed
    if budget < 1:
        raise ConfigurationError(f"budget must be >= 1, got {budget}.")
    keep = np.sort(np.random.default_rng(seed).choice(len(indexed), size=budget, replace=False))
    return [indexed[i] for i in keep]


def cross_validate(specs: Sequence[EsnSpec], train: np.ndarray, validation: np.ndarray, *,
                   members: int = 100, budget: Optional[int] = None, seed: int = 0,
                   threads: Optional[int] = None) -> CvResult:
    """Score each spec by the horizon-1 MSE of its ensemble mean on ``validation``.

    Every grid point uses the same member seeds, spec.seed + i. Ties go to the
    smaller reservoir, then the smaller ridge penalty, then the earlier grid point.

    Raises:
        ConfigurationError: If the grid or the validation split is empty.
    """
    if len(specs) == 0:
        raise ConfigurationError("The hyperparameter grid is empty.")
    validation = np.asarray(validation, dtype=float)
    if validation.shape[0] == 0:
        raise ConfigurationError("The validation split is empty.")
    truth = validation.reshape(validation.shape[0], -1)
    candidates = subsample_grid(specs, budget, seed)

    def score(item: Tuple[int, EsnSpec]) -> float:
        _, spec = item
        ens = run_ensemble(spec, members, train, validation, horizons=(1,), keep_members=False,
                           threads=1)
        return float(horizon_mse(truth, ens.mean)[0])

    scores = parallel_map(score, candidates, threads, desc="   Grid", unit="point")
    rows = []
    for (idx, spec), mse in zip(candidates, scores):
        row = {"grid_index": idx}
        row.update({axis: getattr(spec, name) for axis, name in GRID_AXES.items()})
        row["mse_h1"] = mse
        rows.append(row)
    table = pd.DataFrame(rows)
    finite = table[np.isfinite(table["mse_h1"])]
    if finite.empty:
        raise ConfigurationError("No grid point produced a finite validation MSE.")
    ordered = finite.sort_values(["mse_h1", "n_h", "lambda", "grid_index"], kind="mergesort")
    best_idx = int(ordered.iloc[0]["grid_index"])
    best = dict(candidates)[best_idx]
    return CvResult(best=best, best_mse=float(ordered.iloc[0]["mse_h1"]), table=table)
