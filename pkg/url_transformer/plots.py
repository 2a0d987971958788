"""
Accuracy and loss curves (training vs validation) rendered to SVG.
"""

import logging
import os
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from url_transformer.config import OUTPUT_FILES

logger = logging.getLogger(__name__)

_CURVES = (
    ("accuracy_plot", "Accuracy", "train_accuracy", "val_accuracy"),
    ("loss_plot", "Loss", "train_loss", "val_loss"),
)


def plot_history(history: Sequence, out_dir, logger=None) -> List[str]:
    """
    Writes ``accuracy.svg`` and ``loss.svg`` from the epoch history. Failures
    are logged and never raised; returns the paths actually written.
    """
    logger = logger or logging.getLogger(__name__)
    written = []
    epochs = [r.epoch for r in history]
    for file_key, title, train_field, val_field in _CURVES:
        path = os.path.join(out_dir, OUTPUT_FILES[file_key])
        try:
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.plot(epochs, [getattr(r, train_field) for r in history], marker="o", label="training")
            ax.plot(epochs, [getattr(r, val_field) for r in history], marker="o", label="validation")
            ax.set_title(f"Model {title.lower()} during training & validation")
            ax.set_xlabel("Epoch")
            ax.set_ylabel(title)
            ax.grid(True, alpha=0.3)
            ax.legend()
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
        except Exception as e:
            plt.close("all")
            logger.warning(f"Could not render {path}: {e}")
    return written
