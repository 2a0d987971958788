"""
Configuration for the URL transformer classifier.

The dicts hold the defaults used throughout the package; ``RunConfig`` is the
validated JSON document the command line works from.
"""

import hashlib
import json
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from url_transformer.errors import ConfigError

# Architecture of the classifier
MODEL_CONFIG = {
    "max_len": 256,           # tokens per URL after pad/truncate
    "max_vocab": 256,         # includes PAD (0) and OOV (1)
    "d_model": 256,
    "heads": 4,               # d_k = d_v = d_model / heads = 64
    "ffn_hidden": 128,
    "head_hidden": 64,        # dense layer between pooling and the 2-way output
    "dropout": 0.1,
    "num_classes": 2,
    "causal_mask": False,
}

# Optimisation and checkpointing
TRAIN_CONFIG = {
    "batch_size": 512,
    "epochs": 20,
    "learning_rate": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "deterministic": True,
    "progress": True,
}

# Dataset assembly
DATA_CONFIG = {
    "per_class": 10000,
    "train_fraction": 0.8,
    "holdout_per_class": 0,
    "dedup": False,
}

DEFAULT_SEED = 1337

# Scoring service
SERVE_CONFIG = {
    "host": "127.0.0.1",   # $URLT_HOST overrides
    "port": 8000,          # $URLT_PORT overrides
    "max_batch": 1024,
}

# Stable names of everything written under an output directory
OUTPUT_FILES = {
    "history": "history.csv",
    "checkpoint": "ckpt_epoch_{epoch}.urlt",
    "vocab": "vocab.tsv",
    "report": "report.csv",
    "confusion": "confusion.csv",
    "comparison": "comparison.csv",
    "accuracy_plot": "accuracy.svg",
    "loss_plot": "loss.svg",
    "selected_epoch": "selected_epoch.txt",
    "resolved_config": "config.resolved.json",
    "train_set": "train.tsv",
    "validation_set": "validation.tsv",
    "holdout_set": "holdout.tsv",
}


class DataSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    malicious_csv: Optional[str] = None
    benign_list: Optional[str] = None
    dataset_tsv: Optional[str] = None
    per_class: int = Field(DATA_CONFIG["per_class"], ge=0)
    train_fraction: float = Field(DATA_CONFIG["train_fraction"], gt=0.0, lt=1.0)
    holdout_per_class: int = Field(DATA_CONFIG["holdout_per_class"], ge=0)
    dedup: bool = DATA_CONFIG["dedup"]

    @model_validator(mode="after")
    def _check_sources(self):
        feeds = self.malicious_csv is not None and self.benign_list is not None
        if self.dataset_tsv is None and not feeds:
            raise ValueError("either dataset_tsv or both malicious_csv and benign_list must be set")
        return self


class ModelSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_len: int = Field(MODEL_CONFIG["max_len"], ge=1)
    max_vocab: int = Field(MODEL_CONFIG["max_vocab"], ge=3, le=256)
    d_model: int = Field(MODEL_CONFIG["d_model"], ge=1)
    heads: int = Field(MODEL_CONFIG["heads"], ge=1)
    ffn_hidden: int = Field(MODEL_CONFIG["ffn_hidden"], ge=1)
    head_hidden: int = Field(MODEL_CONFIG["head_hidden"], ge=1)
    dropout: float = Field(MODEL_CONFIG["dropout"], ge=0.0, lt=1.0)
    causal_mask: bool = MODEL_CONFIG["causal_mask"]

    @model_validator(mode="after")
    def _check_heads(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        return self


class TrainSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    batch_size: int = Field(TRAIN_CONFIG["batch_size"], ge=1)
    epochs: int = Field(TRAIN_CONFIG["epochs"], ge=1)
    learning_rate: float = Field(TRAIN_CONFIG["learning_rate"], gt=0.0)
    beta1: float = Field(TRAIN_CONFIG["beta1"], ge=0.0, lt=1.0)
    beta2: float = Field(TRAIN_CONFIG["beta2"], ge=0.0, lt=1.0)
    epsilon: float = Field(TRAIN_CONFIG["epsilon"], gt=0.0)
    deterministic: bool = TRAIN_CONFIG["deterministic"]
    progress: bool = TRAIN_CONFIG["progress"]


class RunConfig(BaseModel):
    """Fully resolved run configuration (the JSON document behind ``--config``)."""

    model_config = ConfigDict(extra="forbid")

    seed: int = Field(DEFAULT_SEED, ge=0, lt=2**63)
    out_dir: str = "runs/latest"
    data: DataSection
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)


def load_run_config(path) -> RunConfig:
    """
    Reads and validates a run configuration file.

    Args:
        path (str | Path): JSON file with the ``RunConfig`` layout.

    Returns:
        RunConfig: the config with every missing key set to its default.

    Raises:
        ConfigError: unreadable file, invalid JSON, unknown keys or bad values.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    except UnicodeDecodeError as e:
        raise ConfigError(f"config {path} is not valid UTF-8: {e}") from e
    return parse_run_config(raw)


def parse_run_config(raw) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid run configuration: {e}") from e


def config_digest(config: RunConfig) -> bytes:
    """SHA-256 over the canonical JSON of everything that affects the trained model."""
    payload = config.model_dump(mode="json", exclude={"out_dir": True, "train": {"progress"}})
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).digest()
