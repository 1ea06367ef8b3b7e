"""Lorenz 96 system with a tunable nonlinearity factor and the method-comparison study.

    dy_i/dt = eta * (y_{i+1} - y_{i-2}) * y_{i-1} - y_i + F      (cyclic in i)

eta = 1 is the classical system; eta = 0 leaves the linear relaxation towards F.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from WindESN.baselines import rolling_arima_sites, rolling_persistence, rolling_var, \
    select_arima_order, select_var_order
from WindESN.cross_validation import EsnGrid, cross_validate
from WindESN.errors import ConfigurationError, IntegrationFailureError
from WindESN.esn import EsnSpec
from WindESN.forecast import HORIZONS, horizon_mse, run_ensemble, target_grid
from WindESN.parallel import parallel_map

STUDY_METHODS = ("esn", "var", "arima", "persistence")
STUDY_ETAS = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4)
TABLE_COLUMNS = ["method", "eta", "horizon", "mse_mean", "mse_sd"]

# Split boundaries on the model time axis (inclusive upper ends)
TRAIN_END = 50.0
VALIDATION_END = 75.0

# Small reservoirs suit five sites; the remaining fields are fixed
STUDY_ESN_BASE = EsnSpec(reservoir_size=100, n_lags=1, leak_rate=1.0, spectral_scale=0.9,
                         w_scale=0.5, u_scale=0.3, w_density=0.2, u_density=0.5, ridge=0.1,
                         burn=50)
STUDY_ESN_GRID = EsnGrid(reservoir_size=(50, 100, 200), spectral_scale=(0.5, 0.9),
                         ridge=(0.01, 0.1, 1.0), n_lags=(1, 2, 3), leak_rate=(0.5, 1.0))


@dataclass(frozen=True, slots=True)
class LorenzConfig:
    """Simulation settings. The observed window starts after ``burn_in_steps`` steps."""
    n_sites: int = 5
    forcing: float = 8.0
    eta: float = 1.0
    dt: float = 0.1
    t_start: float = -199.9
    t_end: float = 100.0
    burn_in_steps: int = 2000
    noise_sd: float = 1.0
    seed: int = 0
    substeps: int = 10

    def __post_init__(self):
        if self.n_sites < 4:
            raise ConfigurationError(f"lorenz.n_sites must be >= 4, got {self.n_sites}.")
        if not self.dt > 0:
            raise ConfigurationError(f"lorenz.dt must be > 0, got {self.dt}.")
        if not self.noise_sd >= 0:
            raise ConfigurationError(f"lorenz.noise_sd must be >= 0, got {self.noise_sd}.")
        if self.substeps < 1:
            raise ConfigurationError(f"lorenz.substeps must be >= 1, got {self.substeps}.")
        if self.t_end <= self.t_start:
            raise ConfigurationError("lorenz.t_end must be after lorenz.t_start.")
        if not 0 <= self.burn_in_steps < self.n_points:
            raise ConfigurationError(
                f"lorenz.burn_in_steps must be in [0, {self.n_points}), got {self.burn_in_steps}."
            )

    @property
    def n_points(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt)) + 1


@dataclass(frozen=True)
class LorenzRun:
    """Post-burn-in times, noiseless states and noisy observations (time x site)."""
    times: np.ndarray
    trajectory: np.ndarray
    observations: np.ndarray


def lorenz_derivative(y: np.ndarray, eta: float, forcing: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[-1] < 4:
        raise ConfigurationError(f"Lorenz 96 needs at least 4 sites, got {y.shape[-1]}.")
    return eta * (np.roll(y, -1, axis=-1) - np.roll(y, 2, axis=-1)) * np.roll(y, 1, axis=-1) \
        - y + forcing


def rk4_step(y: np.ndarray, h: float, eta: float, forcing: float) -> np.ndarray:
    k1 = lorenz_derivative(y, eta, forcing)
    k2 = lorenz_derivative(y + 0.5 * h * k1, eta, forcing)
    k3 = lorenz_derivative(y + 0.5 * h * k2, eta, forcing)
    k4 = lorenz_derivative(y + h * k3, eta, forcing)
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_states(y0: np.ndarray, n_steps: int, dt: float, eta: float, forcing: float,
                     substeps: int = 10) -> np.ndarray:
    """States at n_steps + 1 observation times, each reached by ``substeps`` RK4 steps.

    Raises:
        IntegrationFailureError: If the state stops being finite.
    """
    y = np.asarray(y0, dtype=float).copy()
    out = np.empty((n_steps + 1, y.size))
    out[0] = y
    h = dt / substeps
    for step in range(1, n_steps + 1):
        for _ in range(substeps):
            y = rk4_step(y, h, eta, forcing)
        if not np.all(np.isfinite(y)):
            raise IntegrationFailureError(
                f"Lorenz 96 integration diverged at step {step} (eta={eta}, dt={dt})."
            )
        out[step] = y
    return out


def integrate(config: LorenzConfig, y0: Optional[np.ndarray] = None) -> LorenzRun:
    """Integrate from a standard-normal start (or ``y0``), drop burn-in, add noise."""
    rng = np.random.default_rng(config.seed)
    start = rng.standard_normal(config.n_sites) if y0 is None else np.asarray(y0, dtype=float)
    states = integrate_states(start, config.n_points - 1, config.dt, config.eta, config.forcing,
                              config.substeps)
    times = config.t_start + config.dt * np.arange(config.n_points)
    kept = slice(config.burn_in_steps, None)
    trajectory = states[kept]
    noise = rng.normal(0.0, config.noise_sd, size=trajectory.shape) if config.noise_sd \
        else np.zeros_like(trajectory)
    return LorenzRun(times=np.round(times[kept], 10), trajectory=trajectory,
                     observations=trajectory + noise)


def split_indices(times: np.ndarray, train_end: float = TRAIN_END,
                  validation_end: float = VALIDATION_END) -> Tuple[int, int]:
    """Last row index of the training and of the validation window."""
    eps = 1e-9
    train_last = int(np.flatnonzero(times <= train_end + eps)[-1])
    val_last = int(np.flatnonzero(times <= validation_end + eps)[-1])
    if not train_last < val_last < times.size - 1:
        raise ConfigurationError("Lorenz run does not cover training, validation and test.")
    return train_last, val_last


def replicate_seed(seed: int, eta_index: int, replicate: int) -> int:
    return int(np.random.SeedSequence([seed, eta_index, replicate]).generate_state(1)[0])


def compare_methods(observations: np.ndarray, times: np.ndarray,
                    methods: Sequence[str] = STUDY_METHODS, *,
                    esn_base: EsnSpec = STUDY_ESN_BASE, esn_grid: EsnGrid = STUDY_ESN_GRID,
                    members: int = 10, horizons: Sequence[int] = HORIZONS
                    ) -> Dict[str, np.ndarray]:
    """Test MSE per horizon for each method, after tuning on the validation window.

    Series are standardized with training means and deviations first, so every
    method is scored on the same scale.
    """
    unknown = set(methods) - set(STUDY_METHODS)
    if unknown:
        raise ConfigurationError(f"Unknown study methods {sorted(unknown)}.")
    t_last, v_last = split_indices(times)
    mu = observations[:t_last + 1].mean(axis=0)
    sd = observations[:t_last + 1].std(axis=0, ddof=1)
    Y = (observations - mu) / np.where(sd > 0, sd, 1.0)
    train, validation, test = Y[:t_last + 1], Y[t_last + 1:v_last + 1], Y[v_last + 1:]
    n_val = validation.shape[0]

    results: Dict[str, np.ndarray] = {}
    for method in methods:
        if method == "persistence":
            grid = target_grid(rolling_persistence, Y, t_last, horizons)
        elif method == "var":
            model, _ = select_var_order(train, validation)
            grid = target_grid(lambda s, a, b, hs: rolling_var(model, s, a, b, hs),
                               Y, t_last, horizons)
        elif method == "arima":
            models = [select_arima_order(train[:, j], validation[:, j])[0]
                      for j in range(Y.shape[1])]
            grid = target_grid(lambda s, a, b, hs: rolling_arima_sites(models, s, a, b, hs),
                               Y, t_last, horizons)
        else:
            cv = cross_validate(esn_grid.expand(esn_base), train, validation, members=members,
                                threads=1)
            ens = run_ensemble(cv.best, members, train, Y[t_last + 1:], horizons=horizons,
                               keep_members=False, threads=1)
            grid = ens.mean
        results[method] = horizon_mse(test, grid[:, n_val:])
    return results


def run_study(etas: Sequence[float] = STUDY_ETAS, replicates: int = 50,
              methods: Sequence[str] = STUDY_METHODS, *, config: LorenzConfig = LorenzConfig(),
              esn_base: EsnSpec = STUDY_ESN_BASE, esn_grid: EsnGrid = STUDY_ESN_GRID,
              members: int = 10, horizons: Sequence[int] = HORIZONS,
              threads: Optional[int] = None) -> pd.DataFrame:
    """Simulate, tune and score every method for each eta and replicate.

    Each (eta, replicate) pair draws its own seed from (config.seed, eta index,
    replicate), so results do not depend on the thread count.

    Returns:
        Table with columns method, eta, horizon, mse_mean, mse_sd.
    """
    if replicates < 1:
        raise ConfigurationError(f"lorenz.replicates must be >= 1, got {replicates}.")
    if not etas:
        raise ConfigurationError("lorenz.etas is empty.")
    tasks = [(i, float(eta), r) for i, eta in enumerate(etas) for r in range(replicates)]

    def one(task: Tuple[int, float, int]) -> List[Tuple[str, float, int, int, float]]:
        i, eta, r = task
        seed = replicate_seed(config.seed, i, r)
        run = integrate(replace(config, eta=eta, seed=seed))
        scores = compare_methods(run.observations, run.times, methods,
                                 esn_base=esn_base.with_seed(seed % (2 ** 31)),
                                 esn_grid=esn_grid, members=members, horizons=horizons)
        return [(m, eta, r, h, float(v)) for m, vals in scores.items()
                for h, v in zip(horizons, vals)]

    records = [rec for batch in parallel_map(one, tasks, threads, desc="   Replicates",
                                             unit="run")
               for rec in batch]
    return study_table_to_frame(records, method_order=methods)


def study_table_to_frame(records: Sequence[Tuple[str, float, int, int, float]],
                         method_order: Sequence[str] = STUDY_METHODS) -> pd.DataFrame:
    """Aggregate (method, eta, replicate, horizon, mse) records into mean and sd per cell."""
    raw = pd.DataFrame(list(records), columns=["method", "eta", "replicate", "horizon", "mse"])
    grouped = raw.groupby(["method", "eta", "horizon"], sort=False)["mse"]
    table = grouped.agg(mse_mean="mean",
                        mse_sd=lambda s: float(s.std(ddof=1)) if len(s) > 1 else 0.0)
    table = table.reset_index()
    table["method"] = pd.Categorical(table["method"], categories=list(method_order),
                                     ordered=True)
    table = table.sort_values(["method", "eta", "horizon"]).reset_index(drop=True)
    table["method"] = table["method"].astype(str)
    return table[TABLE_COLUMNS]
