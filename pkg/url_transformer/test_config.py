import json
import logging
from pathlib import Path

import pytest

from url_transformer.config import MODEL_CONFIG, config_digest, load_run_config, parse_run_config
from url_transformer.errors import ConfigError
from url_transformer.plots import plot_history
from url_transformer.run_logging import setup_run_logger
from url_transformer.training import EpochRecord

MINIMAL = {"data": {"dataset_tsv": "data.tsv"}}
REPO_ROOT = Path(__file__).resolve().parent.parent


def test_missing_keys_take_defaults():
    config = parse_run_config(MINIMAL)
    assert config.seed == 1337
    assert config.model.d_model == MODEL_CONFIG["d_model"] == 256
    assert config.model.head_hidden == 64
    assert (config.train.batch_size, config.train.epochs) == (512, 20)
    assert config.data.train_fraction == 0.8


@pytest.mark.parametrize("raw", [
    {**MINIMAL, "unknown": 1},
    {"data": {"dataset_tsv": "d.tsv", "shuffle": True}},
    {"data": {}},
    {**MINIMAL, "model": {"d_model": 10, "heads": 4}},
    {**MINIMAL, "model": {"max_vocab": 300}},
    {**MINIMAL, "seed": -1},
    {**MINIMAL, "train": {"batch_size": 0}},
])
def test_invalid_configs_are_rejected(raw):
    with pytest.raises(ConfigError):
        parse_run_config(raw)


def test_load_run_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(broken)
    good = tmp_path / "good.json"
    good.write_text(json.dumps(MINIMAL), encoding="utf-8")
    assert load_run_config(good).data.dataset_tsv == "data.tsv"


def test_config_digest_ignores_output_location_only():
    base = parse_run_config(MINIMAL)
    moved = parse_run_config({**MINIMAL, "out_dir": "elsewhere", "train": {"progress": False}})
    reseeded = parse_run_config({**MINIMAL, "seed": 2})
    assert len(config_digest(base)) == 32
    assert config_digest(base) == config_digest(moved)
    assert config_digest(base) != config_digest(reseeded)


@pytest.mark.parametrize("name", ["config.json", "config.desk.json"])
def test_shipped_configs_are_valid(name):
    config = load_run_config(REPO_ROOT / name)
    assert config.model.d_model % config.model.heads == 0
    if name == "config.desk.json":
        assert config.model.d_model == 64
        assert 2 * config.data.per_class >= 4000


def test_run_logger_writes_to_a_unique_file(tmp_path):
    logger, log_file = setup_run_logger(tmp_path, "unit", level=logging.INFO)
    logger.info("hello from the run")
    for handler in logger.handlers:
        handler.flush()
    text = open(log_file, encoding="utf-8").read()
    assert " - INFO - hello from the run" in text
    _, second = setup_run_logger(tmp_path, "unit")
    assert second != log_file
    assert len(logger.handlers) == 2


def test_plot_history_writes_svgs(tmp_path):
    history = [EpochRecord(1, 0.6, 0.7, 0.5, 0.75, 1.0), EpochRecord(2, 0.4, 0.8, 0.45, 0.8, 1.0)]
    written = plot_history(history, tmp_path)
    assert sorted(p.rsplit("/", 1)[-1] for p in written) == ["accuracy.svg", "loss.svg"]
    assert (tmp_path / "accuracy.svg").read_text(encoding="utf-8").lstrip().startswith("<?xml")


def test_plot_failures_are_not_raised(tmp_path):
    missing_dir = tmp_path / "does" / "not" / "exist"
    assert plot_history([EpochRecord(1, 0.6, 0.7, 0.5, 0.75, 1.0)], missing_dir) == []
