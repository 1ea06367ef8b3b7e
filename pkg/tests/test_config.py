import pytest
import yaml

from WindESN.config import ExperimentConfig, apply_overrides, config_hash, config_to_dict, \
    dump_config, load_config, parse_config
from WindESN.errors import ConfigurationError

EXAMPLE = """
data:
  field: demo/field.wsf
  work_dir: run
splits:
  train_end: 1199
  validation_end: 1599
harmonics:
  periods: [24, 12]
esn:
  reservoir_size: 200
  u_scale: 0.1
grid:
  n_h: [100, 200]
  lambda: [0.1, 1]
  budget: 3
ensemble:
  members: 5
lorenz:
  etas: [0.2, 1.4]
  replicates: 4
  n_sites: 6
seed: 7
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(EXAMPLE, encoding="utf-8")
    return path


def test_load_example(config_file):
    config = load_config(config_file)
    assert config.data.field == "demo/field.wsf"
    assert config.splits.validation_end == 1599
    assert config.harmonics.periods == (24.0, 12.0)
    assert config.esn.reservoir_size == 200
    assert config.esn_spec.seed == 7
    assert config.grid.budget == 3
    assert config.lorenz.simulation.n_sites == 6
    assert [(s.reservoir_size, s.ridge) for s in config.grid_specs()] == [
        (100, 0.1), (100, 1.0), (200, 0.1), (200, 1.0)]


def test_defaults_without_file():
    config = load_config()
    assert config == ExperimentConfig()
    assert config.ensemble.horizons == (1, 2, 3)


def test_dump_then_load_is_identity(config_file, tmp_path):
    config = load_config(config_file)
    dump_config(config, tmp_path / "out" / "config.yaml")
    again = load_config(tmp_path / "out" / "config.yaml")
    assert again == config
    assert config_hash(again) == config_hash(config)
    assert parse_config(config_to_dict(ExperimentConfig())) == ExperimentConfig()


def test_overrides(config_file):
    config = load_config(config_file, ["esn.ridge=0.5", "ensemble.horizons=[1, 6]", "seed=3",
                                       "power.curve=synthetic-2750kw-75m"])
    assert config.esn.ridge == 0.5
    assert config.ensemble.horizons == (1, 6)
    assert config.seed == 3
    assert config.power.curve == "synthetic-2750kw-75m"
    assert config_hash(config) != config_hash(load_config(config_file))


def test_overrides_do_not_mutate_input():
    raw = {"esn": {"ridge": 0.1}}
    apply_overrides(raw, ["esn.ridge=0.2"])
    assert raw == {"esn": {"ridge": 0.1}}


@pytest.mark.parametrize(
    "override, dotted",
    [("esn.leak_rate=1.5", "esn.leak_rate"),
     ("knots.min_separation=0", "knots.min_separation"),
     ("ensemble.members=zero", "ensemble.members"),
     ("esn.colour=blue", "esn.colour"),
     ("lorenz.n_sites=3", "lorenz.n_sites"),
     ("grid.gamma=[1]", "grid.gamma")],
    ids=["bounds", "separation", "type", "unknown-key", "lorenz", "grid-axis"]
)
def test_errors_name_the_dotted_key(override, dotted):
    with pytest.raises(ConfigurationError, match=dotted.replace(".", r"\.")):
        load_config(overrides=[override])


def test_malformed_inputs(tmp_path):
    with pytest.raises(ConfigurationError, match="section.key=value"):
        load_config(overrides=["no-equals-sign"])
    with pytest.raises(ConfigurationError, match="Unknown config section"):
        parse_config({"esm": {}})
    with pytest.raises(ConfigurationError, match="splits.train_end"):
        parse_config({"splits": {"train_end": 10, "validation_end": 5}})

    path = tmp_path / "list.yaml"
    path.write_text(yaml.safe_dump([1, 2]), encoding="utf-8")
    with pytest.raises(ConfigurationError, match="mapping"):
        load_config(path)
    with pytest.raises(ConfigurationError, match="not found"):
        load_config(tmp_path / "missing.yaml")
