"""
URL Transformer

Character-level, encoder-only transformer that classifies URLs as benign or
malicious, with its own numpy training stack, checkpoints and scoring service.
"""

from .config import MODEL_CONFIG, TRAIN_CONFIG, DATA_CONFIG, SERVE_CONFIG, RunConfig, load_run_config
from .tokenizer import Vocabulary, build_vocab, encode, decode
from .model import HyperParams, ModelParams, init_model, forward, predict, predict_batch
from .training import TrainConfig, Trainer, train, select_checkpoint
from .evaluation import confusion, metrics, comparison_report
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint

__version__ = "1.0.0"

__all__ = [
    "MODEL_CONFIG",
    "TRAIN_CONFIG",
    "DATA_CONFIG",
    "SERVE_CONFIG",
    "RunConfig",
    "load_run_config",
    "Vocabulary",
    "build_vocab",
    "encode",
    "decode",
    "HyperParams",
    "ModelParams",
    "init_model",
    "forward",
    "predict",
    "predict_batch",
    "TrainConfig",
    "Trainer",
    "train",
    "select_checkpoint",
    "confusion",
    "metrics",
    "comparison_report",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]
