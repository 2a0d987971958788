"""
Character-level URL tokenizer.

The vocabulary ranks characters of the training URLs by frequency. Id 0 is
PAD, id 1 is OOV and the most frequent characters take ids 2..size-1, so a
256-entry vocabulary holds 254 characters.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence

import numpy as np

from url_transformer.errors import DataError, FormatError, ParameterError

logger = logging.getLogger(__name__)

PAD_ID = 0
OOV_ID = 1
NUM_SPECIAL = 2
MAX_VOCAB = 256
MAX_LEN = 256
OOV_GLYPH = "\ufffd"


@dataclass(frozen=True)
class Vocabulary:
    char_to_id: Dict[str, int]
    frequencies: Dict[str, int] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return NUM_SPECIAL + len(self.char_to_id)

    @property
    def id_to_char(self) -> Dict[int, str]:
        return {i: c for c, i in self.char_to_id.items()}

    def __len__(self):
        return self.size


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    original_length: int


def build_vocab(corpus: Sequence[str], max_size: int = MAX_VOCAB) -> Vocabulary:
    """
    Ranks characters by corpus frequency (ties by ascending code point) and
    assigns ids 2.. to the ``max_size - 2`` most frequent ones.
    """
    if max_size < NUM_SPECIAL + 1 or max_size > MAX_VOCAB:
        raise ParameterError(f"max_size must be in [3, {MAX_VOCAB}], got {max_size}")
    if len(corpus) == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")

    counts = Counter()
    for url in corpus:
        counts.update(url)

    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], ord(kv[0])))[: max_size - NUM_SPECIAL]
    char_to_id = {ch: NUM_SPECIAL + i for i, (ch, _) in enumerate(ranked)}
    frequencies = {ch: n for ch, n in ranked}
    logger.debug(f"Built vocabulary of {len(char_to_id)} characters from {len(corpus)} URLs "
                 f"({len(counts)} distinct characters seen)")
    return Vocabulary(char_to_id=char_to_id, frequencies=frequencies)


def encode(url: str, vocab: Vocabulary, max_len: int = MAX_LEN) -> TokenSequence:
    """Maps characters to ids (OOV for unknown), truncates to ``max_len`` and right-pads with PAD."""
    clipped = url[:max_len]
    ids = np.zeros(max_len, dtype=np.uint16)
    lookup = vocab.char_to_id
    for position, ch in enumerate(clipped):
        ids[position] = lookup.get(ch, OOV_ID)
    return TokenSequence(ids=ids, original_length=len(clipped))


def encode_batch(urls: Iterable[str], vocab: Vocabulary, max_len: int = MAX_LEN) -> np.ndarray:
    """Row-wise ``encode``; returns a [B x max_len] id array."""
    rows = [encode(url, vocab, max_len).ids for url in urls]
    if not rows:
        return np.zeros((0, max_len), dtype=np.uint16)
    return np.stack(rows)


def decode(seq: TokenSequence, vocab: Vocabulary) -> str:
    """Inverse of ``encode``: PAD ids drop, OOV ids render as U+FFFD."""
    id_to_char = vocab.id_to_char
    chars: List[str] = []
    for token in np.asarray(seq.ids).tolist():
        if token >= vocab.size:
            raise DataError(f"token id {token} is outside the vocabulary (size {vocab.size})")
        if token == PAD_ID:
            continue
        chars.append(OOV_GLYPH if token == OOV_ID else id_to_char[token])
    return "".join(chars)


def save_vocab(vocab: Vocabulary, path) -> None:
    """Writes ``<id>\\t<hex code point>\\t<frequency>`` lines sorted by id."""
    ordered = sorted(vocab.char_to_id.items(), key=lambda kv: kv[1])
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ch, token in ordered:
            f.write(f"{token}\t{ord(ch):x}\t{vocab.frequencies.get(ch, 0)}\n")


def load_vocab(path) -> Vocabulary:
    """Reads a file written by ``save_vocab``."""
    char_to_id: Dict[str, int] = {}
    frequencies: Dict[str, int] = {}
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8").rstrip("\n")
            except UnicodeDecodeError as e:
                raise FormatError(f"{path}:{line_no}: invalid UTF-8") from e
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{line_no}: expected 3 tab-separated fields, got {len(parts)}")
            try:
                token, code_point, freq = int(parts[0]), int(parts[1], 16), int(parts[2])
                ch = chr(code_point)
            except ValueError as e:
                raise FormatError(f"{path}:{line_no}: {e}") from e
            expected = NUM_SPECIAL + len(char_to_id)
            if token != expected:
                raise FormatError(f"{path}:{line_no}: expected id {expected}, got {token}")
            if ch in char_to_id:
                raise FormatError(f"{path}:{line_no}: duplicate character U+{code_point:04X}")
            char_to_id[ch] = token
            frequencies[ch] = freq
    if NUM_SPECIAL + len(char_to_id) > MAX_VOCAB:
        raise FormatError(f"{path}: vocabulary has {len(char_to_id) + NUM_SPECIAL} ids, cap is {MAX_VOCAB}")
    return Vocabulary(char_to_id=char_to_id, frequencies=frequencies)
