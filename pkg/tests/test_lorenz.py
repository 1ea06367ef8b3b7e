import numpy as np
import pytest

from WindESN.cross_validation import EsnGrid
from WindESN.errors import ConfigurationError, IntegrationFailureError
from WindESN.lorenz import STUDY_METHODS, TABLE_COLUMNS, LorenzConfig, compare_methods, \
    integrate, integrate_states, lorenz_derivative, replicate_seed, rk4_step, run_study, \
    split_indices, study_table_to_frame


@pytest.mark.parametrize("eta", [0.0, 0.6, 1.0, 1.4])
def test_forcing_level_is_an_equilibrium(eta):
    y = np.full(5, 8.0)
    np.testing.assert_allclose(lorenz_derivative(y, eta, 8.0), 0.0, atol=1e-12)
    np.testing.assert_allclose(rk4_step(y, 0.01, eta, 8.0), y, atol=1e-12)


def test_derivative_is_cyclic():
    y = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    dy = lorenz_derivative(y, 1.0, 8.0)
    # i = 0: (y1 - y3) * y4 - y0 + F
    assert dy[0] == pytest.approx((2.0 - 4.0) * 5.0 - 1.0 + 8.0)
    with pytest.raises(ConfigurationError):
        lorenz_derivative(np.ones(3), 1.0, 8.0)


def test_linear_system_relaxes_to_forcing(rng):
    states = integrate_states(rng.standard_normal(6), 200, 0.1, eta=0.0, forcing=8.0)
    np.testing.assert_allclose(states[-1], 8.0, atol=1e-6)


def test_divergence_is_reported():
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(IntegrationFailureError, match="step 1"):
            integrate_states(np.full(5, 1e200) * [1, -1, 1, -1, 1], 3, 0.1, 1.0, 8.0)


def test_default_run_layout():
    run = integrate(LorenzConfig(seed=2))
    assert run.observations.shape == (1000, 5)
    assert run.times[0] == pytest.approx(0.1)
    assert run.times[-1] == pytest.approx(100.0)
    assert split_indices(run.times) == (499, 749)
    assert np.std(run.observations - run.trajectory) == pytest.approx(1.0, abs=0.05)


def test_runs_are_reproducible():
    config = LorenzConfig(t_start=-9.9, t_end=10.0, burn_in_steps=100, seed=11)
    a, b = integrate(config), integrate(config)
    np.testing.assert_array_equal(a.observations, b.observations)
    quiet = integrate(LorenzConfig(t_start=-9.9, t_end=10.0, burn_in_steps=100, noise_sd=0.0))
    np.testing.assert_array_equal(quiet.observations, quiet.trajectory)


def test_config_bounds():
    with pytest.raises(ConfigurationError, match="n_sites"):
        LorenzConfig(n_sites=3)
    with pytest.raises(ConfigurationError, match="burn_in_steps"):
        LorenzConfig(burn_in_steps=3000)


def test_replicate_seeds_are_distinct():
    seeds = {replicate_seed(0, i, r) for i in range(3) for r in range(10)}
    assert len(seeds) == 30
    assert replicate_seed(5, 1, 2) == replicate_seed(5, 1, 2)


def test_classical_methods_on_one_run():
    run = integrate(LorenzConfig(seed=4))
    scores = compare_methods(run.observations, run.times, ("persistence", "var"))
    assert set(scores) == {"persistence", "var"}
    assert np.all(np.isfinite(scores["var"]))
    assert scores["persistence"][0] < scores["persistence"][2]


def test_study_table_aggregates_replicates():
    records = [("var", 0.2, 0, 1, 1.0), ("var", 0.2, 1, 1, 3.0),
               ("esn", 0.2, 0, 1, 0.5), ("esn", 0.2, 1, 1, 0.5)]
    table = study_table_to_frame(records)
    assert list(table.columns) == TABLE_COLUMNS
    assert list(table["method"]) == ["esn", "var"]
    var = table[table["method"] == "var"].iloc[0]
    assert var["mse_mean"] == pytest.approx(2.0)
    assert var["mse_sd"] == pytest.approx(np.sqrt(2.0))


@pytest.mark.slow
def test_small_study_shape():
    grid = EsnGrid(reservoir_size=(50,), ridge=(0.1, 1.0))
    table = run_study(etas=(0.2, 1.4), replicates=2, members=2, esn_grid=grid)
    assert len(table) == 2 * len(STUDY_METHODS) * 3
    assert np.all(np.isfinite(table["mse_mean"]))
    assert np.all(table["mse_sd"] >= 0)


def test_rk4_global_error_is_fourth_order():
    # eta = 0 is linear: y(t) = F + (y0 - F) exp(-t)
    y0 = np.array([1.0, -2.0, 0.5, 3.0, 9.0])
    t_end = 2.0

    def error(h):
        y = y0.copy()
        for _ in range(int(round(t_end / h))):
            y = rk4_step(y, h, 0.0, 8.0)
        exact = 8.0 + (y0 - 8.0) * np.exp(-t_end)
        return np.max(np.abs(y - exact))

    ratio = error(0.2) / error(0.1)
    assert 12.0 <= ratio <= 20.0


def test_rotated_start_rotates_trajectory(rng):
    y0 = rng.standard_normal(5)
    a = integrate_states(y0, 50, 0.1, 1.0, 8.0)
    b = integrate_states(np.roll(y0, 2), 50, 0.1, 1.0, 8.0)
    np.testing.assert_allclose(np.roll(a, 2, axis=1), b, atol=1e-9)


@pytest.mark.slow
def test_esn_wins_under_strong_nonlinearity():
    methods = ("esn", "var", "persistence")
    table = run_study(etas=(0.2, 1.4), replicates=10, methods=methods, members=10)
    mean = table.set_index(["method", "eta", "horizon"])["mse_mean"].sort_index()

    for method in methods:
        for eta in (0.2, 1.4):
            assert np.all(np.diff(mean.loc[(method, eta)].to_numpy()) >= 0), (method, eta)
    for h in (2, 3):
        assert mean.loc[("esn", 1.4, h)] <= mean.loc[("var", 1.4, h)]
        assert mean.loc[("esn", 1.4, h)] <= mean.loc[("persistence", 1.4, h)]
    margin = {eta: mean.loc[("var", eta, 3)] - mean.loc[("esn", eta, 3)] for eta in (0.2, 1.4)}
    assert margin[1.4] > margin[0.2]
