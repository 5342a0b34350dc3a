import pytest

from models.dataset import DatasetKind
from models.pipeline import Aggregation, MorphologyOrder
from utils.config import (
    RunConfig,
    load_config_file,
    parse_config_text,
    resolve_config,
    workers_from_env,
    write_resolved_config,
)
from utils.errors import ConfigError, DataIOError


def test_defaults_depend_on_dataset():
    cfd = resolve_config(overrides={"dataset": "cfd"})
    assert cfd.threshold == 0.6
    assert cfd.member_count is None
    assert cfd.fusion_config().member_count == 3
    assert cfd.fusion_config(available=1).member_count == 1
    aigle = resolve_config(overrides={"dataset": "aiglern", "members": 2})
    assert aigle.threshold == 0.4
    assert aigle.fusion_config().member_count == 2
    assert resolve_config().threshold == 0.5


def test_flags_override_file_over_defaults(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# desk run\n"
        "dataset = cfd\n"
        "epochs = 4        # short\n"
        "threshold = 0.7\n"
        "n_grid = 1, 3\n"
        "morphology_order = open_close\n"
        "evaluate_refined = true\n"
        "train_limit = none\n"
    )
    config = resolve_config(path, {"epochs": 2, "threshold": None})
    assert config.dataset == DatasetKind.CFD
    assert config.epochs == 2
    assert config.threshold == 0.7
    assert config.n_grid == [1, 3]
    assert config.morphology_order == MorphologyOrder.OPEN_CLOSE
    assert config.evaluate_refined is True
    assert config.train_limit is None
    assert config.learning_rate == 0.001


def test_unknown_and_invalid_keys_are_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        resolve_config(overrides={"epoch": 3})
    with pytest.raises(ConfigError):
        resolve_config(overrides={"stride": 2})
    with pytest.raises(ConfigError):
        resolve_config(overrides={"threshold": 1.5})
    with pytest.raises(ConfigError):
        parse_config_text("just words")
    with pytest.raises(DataIOError):
        load_config_file(tmp_path / "missing.cfg")


def test_config_text_follows_dotenv_syntax():
    values = parse_config_text('export dataset = "aiglern"\nn_grid = 1,5   # two sizes\nroot=\n\n# trailing note\n')
    assert values == {"dataset": "aiglern", "n_grid": ["1", "5"], "root": None}
    with pytest.raises(ConfigError, match="expected"):
        parse_config_text("epochs = 3\nlonely_key\n", "run.cfg")


def test_derived_configs():
    config = resolve_config(overrides={"dataset": "cfd", "l2_beta": 0.01, "aggregation": "micro", "se_size": 5})
    assert config.train_config().l2_beta == 0.01
    assert config.eval_config().aggregation == Aggregation.MICRO
    assert config.morphology_options().se_size == 5
    assert config.fusion_config().threshold == 0.6
    assert config.sweep_grid().dataset == "cfd"
    with pytest.raises(ConfigError):
        resolve_config(overrides={"se_size": 4}).morphology_options()


def test_resolved_config_round_trips(tmp_path):
    config = resolve_config(overrides={"out": str(tmp_path), "dataset": "aiglern", "t_grid": [0.3, 0.5]})
    path = write_resolved_config(config)
    assert path == tmp_path / "config.resolved"
    again = resolve_config(path)
    assert again == config
    assert again.digest() == config.digest()


def test_model_path_defaults_under_out(tmp_path):
    config = RunConfig(out=str(tmp_path))
    assert config.model_path == tmp_path / "models" / "ensemble.json"
    assert RunConfig(model="m/ensemble.json").model_path.as_posix() == "m/ensemble.json"


def test_workers_from_env(monkeypatch):
    monkeypatch.setenv("CRACK_WORKERS", "3")
    assert workers_from_env() == 3
    monkeypatch.setenv("CRACK_WORKERS", "zero")
    with pytest.raises(ConfigError):
        workers_from_env()
    monkeypatch.delenv("CRACK_WORKERS")
    assert workers_from_env() >= 1
