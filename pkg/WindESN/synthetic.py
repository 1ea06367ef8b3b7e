"""Synthetic hourly wind field used by ``generate-demo`` and the end-to-end tests.

On the square-root scale each location carries a diurnal harmonic mean plus a
residual made of (a) smooth spatial patterns driven by a chaotic Lorenz 96 system,
which gives the residual learnable nonlinear dynamics, and (b) spatially
correlated noise that is independent in time.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.spatial import distance

from WindESN.field_model import SpaceTimeField
from WindESN.lorenz import integrate_states

DEMO_PERIODS = (24.0, 12.0, 8.0)


@dataclass(frozen=True, slots=True)
class DemoSpec:
    n_side: int = 10
    spacing: float = 0.1
    origin: Tuple[float, float] = (40.0, 20.0)
    n_hours: int = 2000
    eta: float = 1.4
    dt_per_hour: float = 0.05
    burn_in_hours: int = 500
    dynamics_weight: float = 0.9
    noise_sd: float = 0.35
    noise_range: float = 0.2
    gamma: float = 0.6
    seed: int = 0


def demo_coordinates(spec: DemoSpec) -> np.ndarray:
    ix, iy = np.meshgrid(np.arange(spec.n_side), np.arange(spec.n_side), indexing="xy")
    return np.column_stack([spec.origin[0] + spec.spacing * ix.ravel(),
                            spec.origin[1] + spec.spacing * iy.ravel()])


def generate_demo_field(spec: DemoSpec = DemoSpec()) -> SpaceTimeField:
    """Positive wind-speed field (m/s), n_side^2 locations by n_hours."""
    rng = np.random.default_rng(spec.seed)
    coords = demo_coordinates(spec)
    n = coords.shape[0]
    t = np.arange(spec.n_hours)

    states = integrate_states(rng.standard_normal(5), spec.n_hours + spec.burn_in_hours - 1,
                              spec.dt_per_hour, spec.eta, 8.0, substeps=5)[spec.burn_in_hours:]
    states = (states - states.mean(axis=0)) / states.std(axis=0)

    centers = coords[rng.choice(n, size=5, replace=False)]
    width = 0.35 * spec.spacing * spec.n_side
    loadings = np.exp(-distance.cdist(coords, centers, "sqeuclidean") / (2 * width ** 2))
    loadings /= np.linalg.norm(loadings, axis=1, keepdims=True)
    dynamic = states @ loadings.T

    cov = np.exp(-distance.cdist(coords, coords) / spec.noise_range)
    chol = linalg.cholesky(cov + 1e-10 * np.eye(n), lower=True)
    noise = rng.standard_normal((spec.n_hours, n)) @ chol.T

    residual = spec.dynamics_weight * dynamic + spec.noise_sd * noise

    x = (coords[:, 0] - coords[:, 0].min()) / max(np.ptp(coords[:, 0]), 1e-12)
    b0 = 2.3 + 0.4 * x
    daily = 0.45 * np.cos(2 * np.pi * (t[:, None] - 15.0) / 24.0) * (0.8 + 0.4 * x)[None, :]
    semi = 0.15 * np.sin(2 * np.pi * t[:, None] / 12.0)
    third = 0.05 * np.cos(2 * np.pi * t[:, None] / 8.0)
    root = b0[None, :] + daily + semi + third + spec.gamma * residual
    speed = np.clip(root, 0.0, None) ** 2

    ids = tuple(f"L{i:03d}" for i in range(n))
    return SpaceTimeField(location_ids=ids, coords=coords, values=speed, start=0, units="m/s")


def demo_turbines(field: SpaceTimeField, count: int = 4) -> pd.DataFrame:
    """Registry rows alternating between the two shipped example turbines."""
    picks = np.linspace(0, field.n_locations - 1, count).round().astype(int)
    curves = ["synthetic-3300kw-84m", "synthetic-2750kw-75m"]
    heights = [84.0, 75.0]
    return pd.DataFrame({
        "location_id": [field.location_ids[i] for i in picks],
        "hub_height": [heights[k % 2] for k in range(count)],
        "curve": [curves[k % 2] for k in range(count)],
        "alpha": [1.0 / 7.0] * count,
    })


def demo_config(field_path: str, turbines_path: Optional[str], n_hours: int,
                seed: int = 0) -> Dict:
    """Desk-scale experiment settings matched to the demo field."""
    train_end = int(0.6 * n_hours) - 1
    validation_end = int(0.8 * n_hours) - 1
    return {
        "data": {"field": field_path, "turbines": turbines_path, "work_dir": "run"},
        "splits": {"train_end": train_end, "validation_end": validation_end, "test_end": None},
        "harmonics": {"periods": list(DEMO_PERIODS)},
        "knots": {"grid_step": 0.25, "speed_threshold": 7.6, "min_separation": 0.005},
        "covariance": {"centers": 4, "radius": 3.0, "bandwidth": 0.5, "restarts": 2,
                       "min_neighbors": 30, "seed": 0},
        "esn": {"reservoir_size": 200, "n_lags": 1, "leak_rate": 1.0, "spectral_scale": 0.9,
                "w_scale": 0.05, "u_scale": 0.1, "w_density": 0.1, "u_density": 0.1,
                "ridge": 0.1, "burn": 50},
        "grid": {"n_h": [100, 200], "lambda": [0.1, 1.0], "delta": [0.5, 0.9], "budget": None},
        "ensemble": {"members": 10, "horizons": [1, 2, 3]},
        "calibration": {"levels": [0.95, 0.8, 0.6]},
        "baselines": {"arima_p": [0, 1, 2], "arima_d": [0, 1], "arima_q": [0, 1],
                      "var_orders": [1, 2], "n_eof": 10},
        "power": {"curve": "synthetic-3300kw-84m", "hub_height": 84.0, "alpha": 1.0 / 7.0,
                  "price": 0.025, "step_hours": 1.0},
        "lorenz": {"etas": [0.2, 0.8, 1.4], "replicates": 10, "members": 10},
        "seed": int(seed),
    }
