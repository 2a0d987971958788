"""
Labelled URL ingestion: PhishTank-style CSV exports (malicious) and plain URL
lists (benign), balanced sampling, seeded shuffling and the train/test split.

All shuffling is a Fisher-Yates pass driven by ``PCG64(seed)``, drawing
``j = integers(0, i + 1)`` for i = n-1 .. 1, so splits reproduce exactly.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from url_transformer.errors import DataError, FormatError, ParameterError
from url_transformer.tensor import make_rng

logger = logging.getLogger(__name__)

BENIGN = 0
MALICIOUS = 1
_FORBIDDEN_IN_TSV = ("\t", "\r", "\n")


@dataclass(frozen=True)
class LabeledUrl:
    url: str
    label: int
    source: str = ""

    def __post_init__(self):
        if not self.url:
            raise DataError("labelled URL must be non-empty")
        if self.label not in (BENIGN, MALICIOUS):
            raise DataError(f"label must be 0 (benign) or 1 (malicious), got {self.label!r}")


@dataclass
class DatasetSplit:
    train: List[LabeledUrl]
    test: List[LabeledUrl]
    seed: int
    holdout: List[LabeledUrl] = field(default_factory=list)


def decode_line(raw: bytes, path, line_no: int) -> str:
    """UTF-8 decode of one raw line; invalid bytes become a DataError naming the line."""
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"{path}:{line_no}: invalid UTF-8 at byte {e.start} of the line") from e


def _invalid_utf8_line(path) -> int:
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                raw.decode("utf-8")
            except UnicodeDecodeError:
                return line_no
    return 0


def load_malicious_csv(path, source: str = "phishtank", logger=None) -> List[LabeledUrl]:
    """
    Reads a CSV export with a header row containing a ``url`` column; every
    data row becomes a label-1 record.

    Raises:
        FormatError: no header row or no ``url`` column.
        DataError: the file is not valid UTF-8.
        OSError: the file cannot be read.
    """
    logger = logger or logging.getLogger(__name__)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise FormatError(f"{path} is empty; expected a header row with a 'url' column") from e
    except pd.errors.ParserError as e:
        raise FormatError(f"{path} is not valid CSV: {e}") from e
    except UnicodeDecodeError as e:
        raise DataError(f"{path}:{_invalid_utf8_line(path)}: invalid UTF-8 in CSV export") from e

    columns = {str(c).strip(): c for c in frame.columns}
    if "url" not in columns:
        raise FormatError(f"{path} has no 'url' column (columns: {list(frame.columns)})")

    records, skipped = [], 0
    for value in frame[columns["url"]]:
        url = value.strip()
        if not url:
            skipped += 1
            continue
        records.append(LabeledUrl(url, MALICIOUS, source))
    if skipped:
        logger.warning(f"Skipped {skipped} row(s) with an empty url in {path}")
    logger.info(f"Loaded {len(records)} malicious URLs from {path}")
    return records


def load_benign_list(path, source: str = "unb", logger=None) -> List[LabeledUrl]:
    """One label-0 record per non-blank line; surrounding whitespace (including CR) is trimmed."""
    logger = logger or logging.getLogger(__name__)
    records = []
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            url = decode_line(raw, path, line_no).strip()
            if url:
                records.append(LabeledUrl(url, BENIGN, source))
    logger.info(f"Loaded {len(records)} benign URLs from {path}")
    return records


def fisher_yates(items: Sequence, rng: np.random.Generator) -> list:
    """Returns a shuffled copy of ``items``."""
    shuffled = list(items)
    for i in range(len(shuffled) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        shuffled[i], shuffled[j] = shuffled[j], shuffled[i]
    return shuffled


def dedup(records: Sequence[LabeledUrl]) -> List[LabeledUrl]:
    """Keeps the first record for each distinct URL string."""
    seen = set()
    unique = []
    for record in records:
        if record.url not in seen:
            seen.add(record.url)
            unique.append(record)
    if len(unique) != len(records):
        logger.info(f"Dropped {len(records) - len(unique)} duplicate URL(s)")
    return unique


def balance_and_sample(benign: Sequence[LabeledUrl], malicious: Sequence[LabeledUrl],
                       per_class: int, seed: int) -> List[LabeledUrl]:
    """Uniformly draws ``per_class`` records from each pool and returns them shuffled together."""
    if per_class < 0:
        raise ParameterError(f"per_class must be >= 0, got {per_class}")
    shortfalls = [f"{name}: have {len(pool)}, need {per_class} (short by {per_class - len(pool)})"
                  for name, pool in (("benign", benign), ("malicious", malicious)) if len(pool) < per_class]
    if shortfalls:
        raise DataError("not enough records to balance: " + "; ".join(shortfalls))

    rng = make_rng(seed)
    picked = fisher_yates(benign, rng)[:per_class] + fisher_yates(malicious, rng)[:per_class]
    return fisher_yates(picked, rng)


def split(data: Sequence[LabeledUrl], train_fraction: float = 0.8, seed: int = 0) -> DatasetSplit:
    """Seeded shuffle, then the first floor(n * fraction) records train and the rest test."""
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError(f"train_fraction must be in (0, 1), got {train_fraction}")
    shuffled = fisher_yates(data, make_rng(seed))
    boundary = math.floor(len(shuffled) * train_fraction)
    return DatasetSplit(train=shuffled[:boundary], test=shuffled[boundary:], seed=seed)


def sample_holdout(benign: Sequence[LabeledUrl], malicious: Sequence[LabeledUrl],
                   exclude: Sequence[LabeledUrl], per_class: int, seed: int) -> List[LabeledUrl]:
    """Balanced comparison set drawn only from URLs absent from ``exclude``."""
    used = {record.url for record in exclude}
    fresh_benign = [r for r in benign if r.url not in used]
    fresh_malicious = [r for r in malicious if r.url not in used]
    return balance_and_sample(fresh_benign, fresh_malicious, per_class, seed + 1)


def write_dataset_tsv(records: Sequence[LabeledUrl], path) -> None:
    """Writes the ``<label>\\t<url>`` cache (UTF-8, LF line endings)."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            if any(ch in record.url for ch in _FORBIDDEN_IN_TSV):
                raise DataError(f"URL contains a tab or line break and cannot be cached: {record.url!r}")
            f.write(f"{record.label}\t{record.url}\n")


def read_dataset_tsv(path, source: Optional[str] = None) -> List[LabeledUrl]:
    """Reads a ``<label>\\t<url>`` file written by ``write_dataset_tsv``."""
    source = source or str(path)
    records = []
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            line = decode_line(raw, path, line_no).rstrip("\r\n")
            if not line:
                continue
            label, sep, url = line.partition("\t")
            if not sep or label not in ("0", "1") or not url:
                raise DataError(f"{path}:{line_no}: expected '<0|1>\\t<url>', got {line[:80]!r}")
            records.append(LabeledUrl(url, int(label), source))
    return records


def prepare_dataset(data_config, seed: int, logger=None) -> DatasetSplit:
    """
    Builds the split described by a run config's ``data`` section.

    Reads the cached TSV when ``dataset_tsv`` is set; otherwise loads both
    feeds, optionally deduplicates, balances ``per_class`` of each label and
    splits. A non-zero ``holdout_per_class`` adds a fresh balanced comparison set.
    """
    logger = logger or logging.getLogger(__name__)
    if data_config.dataset_tsv:
        records = read_dataset_tsv(data_config.dataset_tsv)
        if data_config.dedup:
            records = dedup(records)
        logger.info(f"Loaded {len(records)} labelled URLs from {data_config.dataset_tsv}")
        if data_config.holdout_per_class:
            logger.warning("holdout_per_class needs the raw feeds; no holdout drawn from a cached dataset")
        return split(records, data_config.train_fraction, seed)

    malicious = load_malicious_csv(data_config.malicious_csv, logger=logger)
    benign = load_benign_list(data_config.benign_list, logger=logger)
    if data_config.dedup:
        malicious = dedup(malicious)
        benign = dedup(benign)

    sampled = balance_and_sample(benign, malicious, data_config.per_class, seed)
    result = split(sampled, data_config.train_fraction, seed)
    if data_config.holdout_per_class:
        result.holdout = sample_holdout(benign, malicious, sampled, data_config.holdout_per_class, seed)
    logger.info(f"Dataset ready: {len(result.train)} train / {len(result.test)} validation"
                f" / {len(result.holdout)} holdout records")
    return result
