"""
Binary checkpoint format.

Layout (all integers little-endian):
    magic        4 bytes  b"URLT"
    version      u16      1
    config       32 bytes SHA-256 digest of the run configuration
    hyperparams  9 x u32  vocab_size, max_len, d_model, heads, ffn_hidden,
                          head_hidden, num_classes, causal_mask, dropout (parts per million)
    provenance   u32 epoch, u64 seed
    vocabulary   u32 count, then count x (u32 id, u32 code point, u64 frequency)
    tensors      u32 count, then per tensor: u16 name length, UTF-8 name,
                 u32 rank, rank x u32 extents, float32 payload
    digest       32 bytes SHA-256 of every preceding byte
"""

import hashlib
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from url_transformer.errors import CorruptionError, FormatError, TruncatedCheckpointError
from url_transformer.model import HyperParams, ModelParams, parameter_shapes
from url_transformer.tokenizer import NUM_SPECIAL, Vocabulary

logger = logging.getLogger(__name__)

MAGIC = b"URLT"
FORMAT_VERSION = 1
DIGEST_SIZE = 32
_HYPER = struct.Struct("<9I")
_PROVENANCE = struct.Struct("<IQ")
_VOCAB_ENTRY = struct.Struct("<IIQ")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    hyperparams: HyperParams
    vocab: Vocabulary
    params: Dict[str, np.ndarray]
    epoch: int
    seed: int
    config_digest: bytes = bytes(DIGEST_SIZE)
    version: int = FORMAT_VERSION
    # hex SHA-256 trailer, filled in by to_bytes()/load_checkpoint()
    digest: Optional[str] = field(default=None, compare=False)

    @classmethod
    def from_model(cls, params: ModelParams, vocab: Vocabulary, epoch: int, seed: int,
                   config_digest: bytes = bytes(DIGEST_SIZE)) -> "Checkpoint":
        arrays = {name: np.array(value, dtype=np.float32) for name, value in params.arrays().items()}
        return cls(params.hp, vocab, arrays, epoch, seed, config_digest)

    def model_params(self) -> ModelParams:
        return ModelParams.from_arrays(self.hyperparams, self.params)

    def to_bytes(self) -> bytes:
        if len(self.config_digest) != DIGEST_SIZE:
            raise FormatError(f"config digest must be {DIGEST_SIZE} bytes, got {len(self.config_digest)}")
        hp = self.hyperparams
        parts = [
            MAGIC,
            _U16.pack(self.version),
            self.config_digest,
            _HYPER.pack(hp.vocab_size, hp.max_len, hp.d_model, hp.heads, hp.ffn_hidden, hp.head_hidden,
                        hp.num_classes, int(hp.causal_mask), int(round(hp.dropout * 1_000_000))),
            _PROVENANCE.pack(self.epoch, self.seed),
            _U32.pack(len(self.vocab.char_to_id)),
        ]
        for ch, token in sorted(self.vocab.char_to_id.items(), key=lambda kv: kv[1]):
            parts.append(_VOCAB_ENTRY.pack(token, ord(ch), self.vocab.frequencies.get(ch, 0)))

        parts.append(_U32.pack(len(self.params)))
        for name in parameter_shapes(hp):
            value = np.ascontiguousarray(self.params[name], dtype="<f4")
            encoded = name.encode("utf-8")
            parts.append(_U16.pack(len(encoded)) + encoded)
            parts.append(_U32.pack(value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
            parts.append(value.tobytes())

        body = b"".join(parts)
        trailer = hashlib.sha256(body).digest()
        self.digest = trailer.hex()
        return body + trailer


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.blob):
            raise TruncatedCheckpointError(f"{self.path}: truncated at byte {len(self.blob)} (needed {end})")
        chunk = self.blob[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, layout: struct.Struct):
        return layout.unpack(self.take(layout.size))


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """Writes the checkpoint atomically; returns its hex digest."""
    blob = ckpt.to_bytes()
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(blob)
    os.replace(tmp_path, path)
    logger.debug(f"Saved checkpoint epoch {ckpt.epoch} to {path} ({len(blob)} bytes)")
    return ckpt.digest


def _read_sections(reader: _Reader) -> dict:
    """Parses everything after magic and version; raises TruncatedCheckpointError on overrun."""
    path = reader.path
    sections = {"config_digest": reader.take(DIGEST_SIZE), "hyper": reader.unpack(_HYPER)}
    sections["epoch"], sections["seed"] = reader.unpack(_PROVENANCE)

    (vocab_count,) = reader.unpack(_U32)
    char_to_id, frequencies = {}, {}
    for _ in range(vocab_count):
        token, code_point, freq = reader.unpack(_VOCAB_ENTRY)
        try:
            ch = chr(code_point)
        except (ValueError, OverflowError) as e:
            raise FormatError(f"{path}: invalid code point {code_point}") from e
        char_to_id[ch] = token
        frequencies[ch] = freq
    sections.update(vocab_count=vocab_count, char_to_id=char_to_id, frequencies=frequencies)

    (tensor_count,) = reader.unpack(_U32)
    arrays = {}
    for _ in range(tensor_count):
        (name_len,) = reader.unpack(_U16)
        name = reader.take(name_len).decode("utf-8", errors="replace")
        (rank,) = reader.unpack(_U32)
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arrays[name] = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    sections["arrays"] = arrays
    return sections


def _mismatch_error(blob: bytes, path) -> CorruptionError:
    # a file that ends before its declared sections is reported as truncated
    reader = _Reader(blob, path)
    reader.take(len(MAGIC) + _U16.size)
    try:
        _read_sections(reader)
    except TruncatedCheckpointError as e:
        return e
    except (FormatError, ValueError):
        return CorruptionError(f"{path}: integrity digest mismatch")
    if len(blob) - reader.offset < DIGEST_SIZE:
        return TruncatedCheckpointError(f"{path}: truncated integrity digest")
    return CorruptionError(f"{path}: integrity digest mismatch")


def load_checkpoint(path) -> Checkpoint:
    """
    Reads and verifies a checkpoint.

    The trailer digest is checked before any section past the version is
    parsed, so damage anywhere in the file surfaces as a CorruptionError.

    Raises:
        FormatError: wrong magic, unsupported version or inconsistent sections.
        TruncatedCheckpointError: the file ends early (both an OSError and a CorruptionError).
        CorruptionError: the stored digest does not match the contents.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a URLT checkpoint (bad magic {blob[:4]!r})")
    if len(blob) < len(MAGIC) + _U16.size + DIGEST_SIZE:
        raise TruncatedCheckpointError(f"{path}: truncated header ({len(blob)} bytes)")
    (version,) = _U16.unpack_from(blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")

    body, stored = blob[:-DIGEST_SIZE], blob[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != stored:
        raise _mismatch_error(blob, path)

    reader = _Reader(body, path)
    reader.take(len(MAGIC) + _U16.size)
    sections = _read_sections(reader)
    if reader.offset != len(body):
        raise FormatError(f"{path}: {len(body) - reader.offset} unexpected trailing bytes")

    config_digest, arrays, vocab_count = sections["config_digest"], sections["arrays"], sections["vocab_count"]
    epoch, seed = sections["epoch"], sections["seed"]
    (vocab_size, max_len, d_model, heads, ffn_hidden, head_hidden,
     num_classes, causal, dropout_ppm) = sections["hyper"]
    char_to_id, frequencies = sections["char_to_id"], sections["frequencies"]

    try:
        hp = HyperParams(vocab_size=vocab_size, max_len=max_len, d_model=d_model, heads=heads,
                         ffn_hidden=ffn_hidden, head_hidden=head_hidden, dropout=dropout_ppm / 1_000_000,
                         num_classes=num_classes, causal_mask=bool(causal))
    except Exception as e:
        raise FormatError(f"{path}: invalid hyperparameters: {e}") from e
    expected = parameter_shapes(hp)
    if set(arrays) != set(expected) or any(arrays[n].shape != s for n, s in expected.items()):
        raise FormatError(f"{path}: tensor blocks do not match the stored hyperparameters")
    if NUM_SPECIAL + vocab_count > vocab_size:
        raise FormatError(f"{path}: vocabulary has {vocab_count} entries but vocab_size is only {vocab_size}")

    ckpt = Checkpoint(hyperparams=hp,
                      vocab=Vocabulary(char_to_id=char_to_id, frequencies=frequencies),
                      params={name: arrays[name] for name in expected},
                      epoch=epoch, seed=seed, config_digest=config_digest, version=version)
    ckpt.digest = stored.hex()
    return ckpt
