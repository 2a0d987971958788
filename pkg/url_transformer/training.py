"""
Mini-batch training with a checkpoint and a history row after every epoch.
"""

import logging
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from url_transformer.checkpoint import DIGEST_SIZE, Checkpoint, save_checkpoint
from url_transformer.config import OUTPUT_FILES, TRAIN_CONFIG
from url_transformer.data import DatasetSplit, LabeledUrl, fisher_yates
from url_transformer.errors import ConfigError, DataError, TrainingDivergence, UsageError
from url_transformer.evaluation import confusion, metrics
from url_transformer.model import MALICIOUS, HyperParams, ModelParams, forward, init_model, predict_proba
from url_transformer.optim import AdamState, adam_step
from url_transformer.tensor import ComputeGraph, Tensor, backward, cross_entropy, make_rng
from url_transformer.tokenizer import Vocabulary, encode_batch

HISTORY_COLUMNS = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "wall_time_s"]
SHUFFLE_STREAM = 1
DROPOUT_STREAM = 2


@dataclass
class TrainConfig:
    hyperparams: HyperParams
    batch_size: int = TRAIN_CONFIG["batch_size"]
    epochs: int = TRAIN_CONFIG["epochs"]
    learning_rate: float = TRAIN_CONFIG["learning_rate"]
    beta1: float = TRAIN_CONFIG["beta1"]
    beta2: float = TRAIN_CONFIG["beta2"]
    epsilon: float = TRAIN_CONFIG["epsilon"]
    seed: int = 0
    deterministic: bool = TRAIN_CONFIG["deterministic"]
    progress: bool = False
    checkpoint_dir: Optional[Path] = None
    history_path: Optional[Path] = None
    config_digest: bytes = bytes(DIGEST_SIZE)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")

    @classmethod
    def from_run_config(cls, run_config, vocab_size: int, out_dir, digest: bytes) -> "TrainConfig":
        m, t = run_config.model, run_config.train
        hp = HyperParams(vocab_size=vocab_size, max_len=m.max_len, d_model=m.d_model, heads=m.heads,
                         ffn_hidden=m.ffn_hidden, head_hidden=m.head_hidden, dropout=m.dropout,
                         causal_mask=m.causal_mask)
        out_dir = Path(out_dir)
        return cls(hyperparams=hp, batch_size=t.batch_size, epochs=t.epochs, learning_rate=t.learning_rate,
                   beta1=t.beta1, beta2=t.beta2, epsilon=t.epsilon, seed=run_config.seed,
                   deterministic=t.deterministic, progress=t.progress, checkpoint_dir=out_dir,
                   history_path=out_dir / OUTPUT_FILES["history"], config_digest=digest)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    wall_time: float


@dataclass
class TrainResult:
    history: List[EpochRecord]
    checkpoints: List[Path]
    params: ModelParams
    optimizer: AdamState


def write_history_csv(history: Sequence[EpochRecord], path, deterministic: bool = True) -> None:
    frame = pd.DataFrame(
        [[r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy,
          0.0 if deterministic else r.wall_time] for r in history],
        columns=HISTORY_COLUMNS,
    )
    frame.to_csv(path, index=False, lineterminator="\n")


def read_history_csv(path) -> List[EpochRecord]:
    frame = pd.read_csv(path)
    missing = [c for c in HISTORY_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path} is missing history column(s) {missing}")
    return [EpochRecord(int(row.epoch), float(row.train_loss), float(row.train_acc),
                        float(row.val_loss), float(row.val_acc), float(row.wall_time_s))
            for row in frame.itertuples(index=False)]


def select_checkpoint(history: Sequence[EpochRecord]) -> int:
    """Epoch with the best validation accuracy; ties go to lower validation loss, then the earlier epoch."""
    if not history:
        raise UsageError("cannot select a checkpoint from an empty history")
    best = min(history, key=lambda r: (-r.val_accuracy, r.val_loss, r.epoch))
    return best.epoch


def checkpoint_path(directory, epoch: int) -> Path:
    return Path(directory) / OUTPUT_FILES["checkpoint"].format(epoch=epoch)


def validation_scores(params: ModelParams, vocab: Vocabulary, records: Sequence[LabeledUrl]):
    """(loss, accuracy) of the model on labelled records, scored in inference mode."""
    ids = encode_batch([r.url for r in records], vocab, params.hp.max_len)
    labels = np.array([r.label for r in records], dtype=np.int64)
    probs = predict_proba(params, ids)
    loss = cross_entropy(Tensor(probs), labels).item()
    preds = (probs[:, MALICIOUS] >= 0.5).astype(np.int64)
    return loss, metrics(confusion(preds, labels)).accuracy


class Trainer:
    """
    Runs the epoch loop: seeded shuffle, forward in training mode, cross-entropy,
    backward, Adam; then validation, a history row and a checkpoint.
    """

    def __init__(self, config: TrainConfig, logger: Optional[logging.Logger] = None):
        self.config = config
        self.logger = logger or logging.getLogger(__name__)

    def train(self, split: DatasetSplit, vocab: Vocabulary, params: Optional[ModelParams] = None) -> TrainResult:
        config = self.config
        hp = config.hyperparams
        if not split.train or not split.test:
            raise DataError(f"training needs non-empty train and validation sets "
                            f"(got {len(split.train)} / {len(split.test)})")
        if hp.vocab_size < vocab.size:
            raise ConfigError(f"vocab_size {hp.vocab_size} is smaller than the vocabulary ({vocab.size})")

        params = params or init_model(hp, config.seed)
        state = AdamState(learning_rate=config.learning_rate, beta1=config.beta1,
                          beta2=config.beta2, epsilon=config.epsilon)
        shuffle_rng = make_rng(config.seed, SHUFFLE_STREAM)
        dropout_rng = make_rng(config.seed, DROPOUT_STREAM)

        train_ids = encode_batch([r.url for r in split.train], vocab, hp.max_len)
        train_labels = np.array([r.label for r in split.train], dtype=np.int64)
        if config.checkpoint_dir is not None:
            os.makedirs(config.checkpoint_dir, exist_ok=True)

        self.logger.info(f"Training {params.count()} parameters on {len(split.train)} URLs "
                         f"({len(split.test)} validation), batch {config.batch_size}, {config.epochs} epochs")

        history: List[EpochRecord] = []
        paths: List[Path] = []
        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            order = np.array(fisher_yates(range(len(train_ids)), shuffle_rng), dtype=np.int64)
            total_loss, correct = 0.0, 0
            starts = range(0, len(order), config.batch_size)
            for batch_index, start in enumerate(tqdm(starts, desc=f"Epoch {epoch}/{config.epochs}",
                                                     disable=not config.progress, leave=False)):
                index = order[start:start + config.batch_size]
                labels = train_labels[index]
                params.zero_grad()
                with ComputeGraph() as graph:
                    probs = forward(params, train_ids[index], training=True, rng=dropout_rng)
                    loss = cross_entropy(probs, labels)
                loss_value = loss.item()
                if not math.isfinite(loss_value):
                    raise TrainingDivergence(f"non-finite loss {loss_value} at epoch {epoch}, batch {batch_index}")
                backward(graph, loss)
                adam_step(params.arrays(), params.grads(), state)
                total_loss += loss_value * len(index)
                correct += int(np.sum((probs.data[:, MALICIOUS] >= 0.5) == (labels == MALICIOUS)))

            val_loss, val_accuracy = validation_scores(params, vocab, split.test)
            record = EpochRecord(epoch=epoch,
                                 train_loss=total_loss / len(order),
                                 train_accuracy=correct / len(order),
                                 val_loss=val_loss,
                                 val_accuracy=val_accuracy,
                                 wall_time=time.perf_counter() - started)
            history.append(record)
            self.logger.info(f"Epoch {epoch}: train loss {record.train_loss:.4f} acc {record.train_accuracy:.4f} | "
                             f"val loss {record.val_loss:.4f} acc {record.val_accuracy:.4f} | "
                             f"{record.wall_time:.1f}s")

            if config.checkpoint_dir is not None:
                ckpt = Checkpoint.from_model(params, vocab, epoch=epoch, seed=config.seed,
                                             config_digest=config.config_digest)
                path = checkpoint_path(config.checkpoint_dir, epoch)
                save_checkpoint(ckpt, path)
                paths.append(path)
            if config.history_path is not None:
                write_history_csv(history, config.history_path, config.deterministic)

        return TrainResult(history=history, checkpoints=paths, params=params, optimizer=state)


def train(config: TrainConfig, split: DatasetSplit, vocab: Vocabulary, logger=None) -> TrainResult:
    return Trainer(config, logger).train(split, vocab)
