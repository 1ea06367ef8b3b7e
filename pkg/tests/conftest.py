import numpy as np
import pytest

from WindESN.esn import EsnSpec
from WindESN.field_model import SpaceTimeField


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def lattice_coords():
    """6 x 6 lattice with 0.2 degree spacing."""
    ix, iy = np.meshgrid(np.arange(6), np.arange(6), indexing="xy")
    return np.column_stack([10.0 + 0.2 * ix.ravel(), 50.0 + 0.2 * iy.ravel()])


@pytest.fixture
def wind_field(lattice_coords, rng):
    """Positive hourly field with a daily cycle: 36 locations x 480 hours."""
    t = np.arange(480)[:, None]
    n = lattice_coords.shape[0]
    root = (2.5 + 0.1 * np.arange(n)[None, :] / n
            + 0.4 * np.cos(2 * np.pi * t / 24.0)
            + 0.3 * rng.standard_normal((480, n)))
    values = np.clip(root, 0.05, None) ** 2
    ids = tuple(f"S{i:02d}" for i in range(n))
    return SpaceTimeField(location_ids=ids, coords=lattice_coords, values=values, units="m/s")


@pytest.fixture
def ar_series(rng):
    """Three independent AR(1) series (phi = 0.7), 400 steps."""
    e = rng.standard_normal((400, 3))
    y = np.zeros_like(e)
    for t in range(1, 400):
        y[t] = 0.7 * y[t - 1] + e[t]
    return y


@pytest.fixture
def small_spec():
    return EsnSpec(reservoir_size=40, n_lags=1, leak_rate=1.0, spectral_scale=0.9, w_scale=0.1,
                   u_scale=0.1, w_density=0.2, u_density=0.5, ridge=0.1, seed=3, burn=20)
