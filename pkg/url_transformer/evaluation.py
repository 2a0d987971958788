"""
Confusion matrix, accuracy/precision/recall/F1 and the ranked model comparison.

Malicious (label 1) is the positive class. A metric whose denominator is zero
is reported as undefined (``None``), rendered ``NA``.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from url_transformer.errors import DataError, UsageError
from url_transformer.model import ModelParams, predict_batch
from url_transformer.tokenizer import Vocabulary

logger = logging.getLogger(__name__)

UNDEFINED = "NA"
REPORT_COLUMNS = ["model", "accuracy", "precision", "recall", "f1"]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]

    def formatted(self, digits: int = 3) -> dict:
        return {name: format_metric(getattr(self, name), digits)
                for name in ("accuracy", "precision", "recall", "f1")}


def format_metric(value: Optional[float], digits: int = 3) -> str:
    return UNDEFINED if value is None else f"{value:.{digits}f}"


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator else None


def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    """Counts TP/FP/FN/TN with malicious (1) as the positive class."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise UsageError(f"confusion needs equal-length 1-D inputs, got {preds.shape} and {labels.shape}")
    if preds.size == 0:
        raise UsageError("confusion over an empty set")
    for name, values in (("predictions", preds), ("labels", labels)):
        if not np.isin(values, (0, 1)).all():
            raise DataError(f"{name} must contain only 0 and 1")
    return ConfusionMatrix(
        tp=int(np.sum((preds == 1) & (labels == 1))),
        fp=int(np.sum((preds == 1) & (labels == 0))),
        fn=int(np.sum((preds == 0) & (labels == 1))),
        tn=int(np.sum((preds == 0) & (labels == 0))),
    )


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy, precision, recall and F1 (harmonic mean of precision and recall)."""
    if cm.total == 0:
        raise UsageError("metrics of an empty confusion matrix")
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricsReport(accuracy=(cm.tp + cm.tn) / cm.total, precision=precision, recall=recall, f1=f1)


def evaluate_model(params: ModelParams, vocab: Vocabulary, data, batch_size: int = 256) -> Tuple[ConfusionMatrix, MetricsReport]:
    """Scores every record in inference mode and summarises the predictions."""
    if not data:
        raise UsageError("evaluate_model needs at least one labelled URL")
    results = predict_batch(params, vocab, [record.url for record in data], batch_size=batch_size)
    preds = [1 if label == "malicious" else 0 for label, _ in results]
    cm = confusion(preds, [record.label for record in data])
    return cm, metrics(cm)


def render_confusion(cm: ConfusionMatrix) -> str:
    """Text grid: rows are actual classes, columns predicted classes."""
    frame = pd.DataFrame(
        [[cm.tn, cm.fp], [cm.fn, cm.tp]],
        index=["actual benign", "actual malicious"],
        columns=["pred benign", "pred malicious"],
    )
    return frame.to_string()


def confusion_csv(cm: ConfusionMatrix) -> str:
    frame = pd.DataFrame(
        [["benign", cm.tn, cm.fp], ["malicious", cm.fn, cm.tp]],
        columns=["actual", "pred_benign", "pred_malicious"],
    )
    return frame.to_csv(index=False, lineterminator="\n")


@dataclass(frozen=True)
class ComparisonTable:
    rows: List[Tuple[str, MetricsReport]]

    def names(self) -> List[str]:
        return [name for name, _ in self.rows]

    def to_frame(self) -> pd.DataFrame:
        records = [{"model": name,
                    "accuracy": report.accuracy,
                    "precision": report.precision,
                    "recall": report.recall,
                    "f1": report.f1} for name, report in self.rows]
        return pd.DataFrame(records, columns=REPORT_COLUMNS)

    def to_text(self, digits: int = 3) -> str:
        display = pd.DataFrame([{"model": name, **report.formatted(digits)} for name, report in self.rows],
                               columns=REPORT_COLUMNS)
        return display.to_string(index=False)

    def to_csv(self) -> str:
        frame = self.to_frame().astype({c: "float64" for c in REPORT_COLUMNS[1:]})
        return frame.to_csv(index=False, na_rep=UNDEFINED, lineterminator="\n")


def comparison_report(entries: Sequence[Tuple[str, MetricsReport]]) -> ComparisonTable:
    """Ranks models by F1 descending (undefined last), then accuracy descending, then name."""
    def key(entry):
        name, report = entry
        return (report.f1 is None, -(report.f1 or 0.0), -report.accuracy, name)

    return ComparisonTable(rows=sorted(entries, key=key))


def load_external_reports(path) -> List[Tuple[str, MetricsReport]]:
    """Reads baseline metrics in the report CSV layout; ``NA`` cells are undefined."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (UnicodeDecodeError, pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise DataError(f"{path} is not a readable baseline CSV: {e}") from e
    missing = [c for c in REPORT_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path} is missing column(s) {missing}")

    def parse(cell: str) -> Optional[float]:
        cell = cell.strip()
        if cell == UNDEFINED:
            return None
        try:
            return float(cell)
        except ValueError as e:
            raise DataError(f"{path}: {cell!r} is not a metric value") from e

    entries = []
    for row in frame.itertuples(index=False):
        accuracy = parse(row.accuracy)
        if accuracy is None:
            raise DataError(f"{path}: accuracy of {row.model!r} cannot be undefined")
        entries.append((row.model, MetricsReport(accuracy, parse(row.precision), parse(row.recall), parse(row.f1))))
    return entries

