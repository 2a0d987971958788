import math

import numpy as np
import pytest

from url_transformer.checkpoint import load_checkpoint
from url_transformer.conftest import labelled
from url_transformer.data import BENIGN, MALICIOUS, DatasetSplit, LabeledUrl, fisher_yates
from url_transformer.errors import ConfigError, DataError, TrainingDivergence, UsageError
from url_transformer.evaluation import evaluate_model
from url_transformer.model import HyperParams, forward, init_model
from url_transformer.tensor import cross_entropy, make_rng
from url_transformer.tokenizer import build_vocab, encode_batch
from url_transformer.training import (
    EpochRecord,
    TrainConfig,
    Trainer,
    checkpoint_path,
    read_history_csv,
    select_checkpoint,
    train,
    write_history_csv,
)


def _record(epoch, val_acc, val_loss):
    return EpochRecord(epoch, 0.5, 0.5, val_loss, val_acc, 1.25)


def _split(records, seed=0):
    return DatasetSplit(train=records[: len(records) * 4 // 5], test=records[len(records) * 4 // 5:], seed=seed)


@pytest.fixture
def tiny_config(small_hp, tmp_path):
    return TrainConfig(hyperparams=small_hp, batch_size=8, epochs=2, seed=3,
                       checkpoint_dir=tmp_path / "ckpts", history_path=tmp_path / "history.csv")


def test_select_checkpoint_rules():
    assert select_checkpoint([_record(1, 0.90, 0.4), _record(2, 0.95, 0.3), _record(3, 0.95, 0.35)]) == 2
    assert select_checkpoint([_record(i, 0.5 + i / 10, 0.5) for i in range(1, 5)]) == 4
    assert select_checkpoint([_record(1, 0.7, 0.6)]) == 1
    assert select_checkpoint([_record(1, 0.8, 0.3), _record(2, 0.8, 0.3)]) == 1
    with pytest.raises(UsageError):
        select_checkpoint([])


def test_train_config_validation(small_hp):
    with pytest.raises(ConfigError):
        TrainConfig(hyperparams=small_hp, batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(hyperparams=small_hp, epochs=0)
    defaults = TrainConfig(hyperparams=small_hp)
    assert (defaults.batch_size, defaults.epochs) == (512, 20)


def test_one_epoch_step_arithmetic(small_hp, tmp_path):
    records = labelled(5)
    vocab = build_vocab([r.url for r in records], small_hp.vocab_size)
    config = TrainConfig(hyperparams=small_hp, batch_size=4, epochs=1, seed=1, checkpoint_dir=tmp_path)
    result = train(config, DatasetSplit(train=records, test=records[:2], seed=1), vocab)
    assert result.optimizer.step == 3
    assert len(result.history) == 1
    assert result.checkpoints == [checkpoint_path(tmp_path, 1)]
    assert sorted(p.name for p in tmp_path.glob("*.urlt")) == ["ckpt_epoch_1.urlt"]


def test_first_batch_loss_is_near_ln2():
    records = labelled(32)
    vocab = build_vocab([r.url for r in records])
    # every URL is longer than max_len, so no position is padding
    hp = HyperParams(vocab_size=vocab.size, max_len=16, d_model=8, heads=2, ffn_hidden=16, head_hidden=64)
    params = init_model(hp, seed=1337)
    batch = records[:8] + records[-8:]
    ids = encode_batch([r.url for r in batch], vocab, hp.max_len)
    loss = cross_entropy(forward(params, ids), [r.label for r in batch]).item()
    assert abs(loss - math.log(2)) < 0.15


def test_history_and_checkpoints_per_epoch(tiny_config, sample_records):
    vocab = build_vocab([r.url for r in sample_records], tiny_config.hyperparams.vocab_size)
    split = _split(sample_records)
    result = Trainer(tiny_config).train(split, vocab)

    assert [r.epoch for r in result.history] == [1, 2]
    assert len(result.checkpoints) == 2
    for record in result.history:
        assert 0.0 <= record.train_accuracy <= 1.0 and 0.0 <= record.val_accuracy <= 1.0
        assert record.train_loss >= 0.0 and record.val_loss >= 0.0
        ckpt = load_checkpoint(result.checkpoints[record.epoch - 1])
        assert ckpt.epoch == record.epoch
        _, report = evaluate_model(ckpt.model_params(), ckpt.vocab, split.test)
        assert report.accuracy == record.val_accuracy

    last = load_checkpoint(result.checkpoints[-1])
    for name, array in result.params.arrays().items():
        np.testing.assert_array_equal(last.params[name], array)

    history = read_history_csv(tiny_config.history_path)
    assert [r.epoch for r in history] == [1, 2]
    assert all(r.wall_time == 0.0 for r in history)


def test_training_is_reproducible(small_hp, sample_records, tmp_path):
    vocab = build_vocab([r.url for r in sample_records], small_hp.vocab_size)
    outputs = []
    for run in ("a", "b"):
        config = TrainConfig(hyperparams=small_hp, batch_size=8, epochs=2, seed=3,
                             checkpoint_dir=tmp_path / run, history_path=tmp_path / run / "history.csv")
        train(config, _split(sample_records), vocab)
        outputs.append([(tmp_path / run / name).read_bytes()
                        for name in ("history.csv", "ckpt_epoch_1.urlt", "ckpt_epoch_2.urlt")])
    assert outputs[0] == outputs[1]


def test_empty_split_is_a_data_error(tiny_config, sample_records):
    vocab = build_vocab([r.url for r in sample_records], tiny_config.hyperparams.vocab_size)
    with pytest.raises(DataError):
        Trainer(tiny_config).train(DatasetSplit(train=[], test=sample_records, seed=0), vocab)


def test_non_finite_loss_aborts_with_batch_index(small_hp, sample_records):
    vocab = build_vocab([r.url for r in sample_records], small_hp.vocab_size)
    params = init_model(small_hp, 0)
    params["out_b"].data[:] = np.nan
    config = TrainConfig(hyperparams=small_hp, batch_size=8, epochs=1)
    with pytest.raises(TrainingDivergence) as excinfo:
        Trainer(config).train(_split(sample_records), vocab, params=params)
    assert "batch 0" in str(excinfo.value)


def test_history_csv_round_trip(tmp_path):
    history = [_record(1, 0.75, 0.5), _record(2, 0.875, 0.25)]
    path = tmp_path / "history.csv"
    write_history_csv(history, path, deterministic=False)
    assert path.read_text(encoding="utf-8").splitlines()[0] == "epoch,train_loss,train_acc,val_loss,val_acc,wall_time_s"
    assert read_history_csv(path) == history


@pytest.mark.slow
def test_small_model_memorises_arbitrary_labels():
    urls = [r.url for r in labelled(32)]
    labels = fisher_yates([BENIGN] * 32 + [MALICIOUS] * 32, make_rng(5))
    records = [LabeledUrl(url, label, "test") for url, label in zip(urls, labels)]
    vocab = build_vocab(urls)
    hp = HyperParams(vocab_size=vocab.size, max_len=64, d_model=32, heads=4, ffn_hidden=64, head_hidden=32)
    config = TrainConfig(hyperparams=hp, batch_size=16, epochs=200, seed=5)
    assert (config.learning_rate, hp.dropout) == (1e-3, 0.1)
    result = train(config, DatasetSplit(train=records, test=records, seed=5), vocab)
    assert max(r.train_accuracy for r in result.history) == 1.0
    _, report = evaluate_model(result.params, vocab, records)
    assert report.accuracy == 1.0
