"""
Shared fixtures: small labelled URL sets, reduced hyperparameters, a saved
checkpoint and a central-difference gradient checker.
"""

import json

import numpy as np
import pytest

from url_transformer.checkpoint import Checkpoint, save_checkpoint
from url_transformer.data import BENIGN, MALICIOUS, LabeledUrl
from url_transformer.model import HyperParams, init_model
from url_transformer.tensor import ComputeGraph, backward
from url_transformer.tokenizer import build_vocab


def benign_urls(n):
    return [f"https://www.site{i}.com/about/page{i % 7}" for i in range(n)]


def malicious_urls(n):
    return [f"http://{i}.{i * 3 % 251}.login-verify.xyz/update.php?acct={i}" for i in range(n)]


def labelled(n_per_class):
    records = [LabeledUrl(u, BENIGN, "test") for u in benign_urls(n_per_class)]
    records += [LabeledUrl(u, MALICIOUS, "test") for u in malicious_urls(n_per_class)]
    return records


def check_gradients(loss_fn, tensors, eps=1e-6, tol=1e-3):
    """
    Asserts that the analytic gradient of ``loss_fn()`` matches central
    differences for every element of every tensor in ``tensors`` (float64).
    """
    for t in tensors:
        t.zero_grad()
    with ComputeGraph() as graph:
        loss = loss_fn()
    backward(graph, loss)

    for t in tensors:
        assert t.data.dtype == np.float64
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        for index in np.ndindex(t.shape):
            original = t.data[index]
            t.data[index] = original + eps
            plus = loss_fn().item()
            t.data[index] = original - eps
            minus = loss_fn().item()
            t.data[index] = original
            numeric[index] = (plus - minus) / (2 * eps)
        scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
        worst = np.max(np.abs(analytic - numeric) / scale)
        assert worst < tol, f"{t.name or 'tensor'}: relative gradient error {worst:.2e}"


@pytest.fixture
def grad_check():
    return check_gradients


@pytest.fixture
def sample_records():
    return labelled(32)


@pytest.fixture
def small_hp():
    return HyperParams(vocab_size=64, max_len=32, d_model=16, heads=2, ffn_hidden=16,
                       head_hidden=8, dropout=0.1)


@pytest.fixture
def small_model(sample_records, small_hp):
    vocab = build_vocab([r.url for r in sample_records], max_size=small_hp.vocab_size)
    return init_model(small_hp, seed=11), vocab


@pytest.fixture
def checkpoint_file(tmp_path, small_model):
    params, vocab = small_model
    path = tmp_path / "ckpt_epoch_1.urlt"
    save_checkpoint(Checkpoint.from_model(params, vocab, epoch=1, seed=11), path)
    return path


@pytest.fixture
def feed_files(tmp_path):
    """PhishTank-style CSV and a plain benign list with 40 URLs each."""
    csv_path = tmp_path / "phishtank.csv"
    lines = ["phish_id,url,verified"] + [f"{i},{u},yes" for i, u in enumerate(malicious_urls(40))]
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    list_path = tmp_path / "benign.txt"
    list_path.write_text("\n".join(benign_urls(40)) + "\n", encoding="utf-8")
    return csv_path, list_path


@pytest.fixture
def run_config_file(tmp_path, feed_files):
    csv_path, list_path = feed_files
    config = {
        "seed": 7,
        "out_dir": str(tmp_path / "run"),
        "data": {"malicious_csv": str(csv_path), "benign_list": str(list_path), "per_class": 20},
        "model": {"max_len": 32, "max_vocab": 64, "d_model": 16, "heads": 2,
                  "ffn_hidden": 16, "head_hidden": 8},
        "train": {"batch_size": 8, "epochs": 2, "progress": False},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path
