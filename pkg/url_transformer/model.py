"""
Encoder-only transformer classifier for tokenized URLs.

Layer sequence: input ids -> token + position embedding -> one encoder block
(multi-head self-attention and a ReLU feed-forward network, each with a
residual connection and post layer norm) -> mean over time steps -> dropout
-> dense + ReLU -> dropout -> dense -> softmax over {benign, malicious}.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from url_transformer.config import MODEL_CONFIG
from url_transformer.errors import ConfigError, DataError, DimensionError, FormatError
from url_transformer.tensor import (
    Tensor,
    add,
    causal_mask,
    dropout,
    embedding,
    layer_norm,
    matmul,
    mean_pool_time,
    permute,
    relu,
    reshape,
    scaled_dot_attention,
    softmax_rows,
)
from url_transformer.tokenizer import Vocabulary, encode_batch

logger = logging.getLogger(__name__)

LABELS = ("benign", "malicious")
MALICIOUS = 1
LAYER_NORM_EPS = 1e-5
INFERENCE_BATCH = 256


@dataclass(frozen=True)
class HyperParams:
    vocab_size: int = MODEL_CONFIG["max_vocab"]
    max_len: int = MODEL_CONFIG["max_len"]
    d_model: int = MODEL_CONFIG["d_model"]
    heads: int = MODEL_CONFIG["heads"]
    ffn_hidden: int = MODEL_CONFIG["ffn_hidden"]
    head_hidden: int = MODEL_CONFIG["head_hidden"]
    dropout: float = MODEL_CONFIG["dropout"]
    num_classes: int = MODEL_CONFIG["num_classes"]
    causal_mask: bool = MODEL_CONFIG["causal_mask"]

    def __post_init__(self):
        for name in ("vocab_size", "max_len", "d_model", "heads", "ffn_hidden", "head_hidden", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.vocab_size > 256:
            raise ConfigError(f"vocab_size is capped at 256, got {self.vocab_size}")
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    @property
    def d_v(self) -> int:
        return self.d_model // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(hp: HyperParams) -> Dict[str, Tuple[int, ...]]:
    """Name -> shape of every learnable tensor, in canonical order."""
    d = hp.d_model
    return {
        "token_embedding": (hp.vocab_size, d),
        "position_embedding": (hp.max_len, d),
        # per-head W_i^Q / W_i^K / W_i^V fused column-wise into one projection each
        "attn_wq": (d, hp.heads * hp.d_k),
        "attn_wk": (d, hp.heads * hp.d_k),
        "attn_wv": (d, hp.heads * hp.d_v),
        "attn_wo": (hp.heads * hp.d_v, d),
        "ln1_gamma": (d,),
        "ln1_beta": (d,),
        "ffn_w1": (d, hp.ffn_hidden),
        "ffn_b1": (hp.ffn_hidden,),
        "ffn_w2": (hp.ffn_hidden, d),
        "ffn_b2": (d,),
        "ln2_gamma": (d,),
        "ln2_beta": (d,),
        "head_w": (d, hp.head_hidden),
        "head_b": (hp.head_hidden,),
        "out_w": (hp.head_hidden, hp.num_classes),
        "out_b": (hp.num_classes,),
    }


def parameter_count(hp: HyperParams) -> int:
    return sum(int(np.prod(shape)) for shape in parameter_shapes(hp).values())


def glorot_bound(shape: Tuple[int, ...]) -> float:
    fan_in, fan_out = shape
    return math.sqrt(6.0 / (fan_in + fan_out))


class ModelParams:
    """All learnable tensors of the classifier, keyed by name in canonical order."""

    def __init__(self, hp: HyperParams, tensors: Dict[str, Tensor]):
        expected = parameter_shapes(hp)
        if list(tensors) != list(expected):
            raise FormatError(f"parameter names {list(tensors)} do not match {list(expected)}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise FormatError(f"parameter {name!r} has shape {tensors[name].shape}, expected {shape}")
        self.hp = hp
        self.tensors = tensors

    @classmethod
    def from_arrays(cls, hp: HyperParams, arrays: Dict[str, np.ndarray], dtype=np.float32) -> "ModelParams":
        tensors = {name: Tensor(np.array(value, dtype=dtype), requires_grad=True, name=name)
                   for name, value in arrays.items()}
        return cls(hp, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}

    def grads(self) -> Dict[str, Optional[np.ndarray]]:
        return {name: t.grad for name, t in self.tensors.items()}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def init_model(hp: HyperParams, seed: int, dtype=np.float32) -> ModelParams:
    """
    Glorot-uniform weights, zero biases and layer-norm betas, unit layer-norm gammas.
    Deterministic given ``seed``.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    arrays: Dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(hp).items():
        if name.endswith("_gamma"):
            arrays[name] = np.ones(shape)
        elif name.endswith(("_beta", "_b", "_b1", "_b2")):
            arrays[name] = np.zeros(shape)
        else:
            bound = glorot_bound(shape)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    params = ModelParams.from_arrays(hp, arrays, dtype=dtype)
    logger.debug(f"Initialised {params.count()} parameters (seed {seed})")
    return params


def _split_heads(x: Tensor, heads: int) -> Tensor:
    batch, steps, width = x.shape
    return permute(reshape(x, (batch, steps, heads, width // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    batch, heads, steps, width = x.shape
    return reshape(permute(x, (0, 2, 1, 3)), (batch, steps, heads * width))


def multi_head_attention(x: Tensor, params: ModelParams) -> Tensor:
    """Concat(head_1..head_h) W^O with head_i = Attention(x W_i^Q, x W_i^K, x W_i^V)."""
    hp = params.hp
    q = _split_heads(matmul(x, params["attn_wq"]), hp.heads)
    k = _split_heads(matmul(x, params["attn_wk"]), hp.heads)
    v = _split_heads(matmul(x, params["attn_wv"]), hp.heads)
    mask = causal_mask(x.shape[1]) if hp.causal_mask else None
    heads = scaled_dot_attention(q, k, v, mask=mask)
    return matmul(_merge_heads(heads), params["attn_wo"])


def feed_forward(x: Tensor, params: ModelParams) -> Tensor:
    """ReLU(x W_1 + b_1) W_2 + b_2."""
    hidden = relu(add(matmul(x, params["ffn_w1"]), params["ffn_b1"]))
    return add(matmul(hidden, params["ffn_w2"]), params["ffn_b2"])


def encoder_block(x: Tensor, params: ModelParams, training: bool, rng=None) -> Tensor:
    """
    One post-norm encoder block over [L x d_model] or [B x L x d_model] input:
    y1 = LN(x + Dropout(MultiHead(x, x, x))); y2 = LN(y1 + Dropout(FFN(y1))).
    """
    hp = params.hp
    if x.shape[-1] != hp.d_model or x.data.ndim not in (2, 3):
        raise DimensionError(f"encoder_block expects [..., L, {hp.d_model}] input, got shape {x.shape}")
    single = x.data.ndim == 2
    if single:
        x = reshape(x, (1,) + x.shape)

    attended = dropout(multi_head_attention(x, params), hp.dropout, training, rng)
    y1 = layer_norm(add(x, attended), params["ln1_gamma"], params["ln1_beta"], LAYER_NORM_EPS)
    transformed = dropout(feed_forward(y1, params), hp.dropout, training, rng)
    y2 = layer_norm(add(y1, transformed), params["ln2_gamma"], params["ln2_beta"], LAYER_NORM_EPS)

    if single:
        y2 = reshape(y2, y2.shape[1:])
    return y2


def forward(params: ModelParams, batch, training: bool = False, rng=None) -> Tensor:
    """
    Class probabilities [B x num_classes] for a [B x L] array of token ids (L <= max_len).
    """
    hp = params.hp
    ids = np.asarray(batch)
    if ids.ndim != 2:
        raise DimensionError(f"forward expects a [B, L] id array, got shape {ids.shape}")
    steps = ids.shape[1]
    if steps < 1 or steps > hp.max_len:
        raise DimensionError(f"sequence length {steps} outside [1, {hp.max_len}]")
    if ids.size and (ids.min() < 0 or ids.max() >= hp.vocab_size):
        raise DataError(f"token ids must be in [0, {hp.vocab_size}), got max {ids.max()}")

    tokens = embedding(params["token_embedding"], ids)
    positions = embedding(params["position_embedding"], np.arange(steps))
    x = add(tokens, positions)

    encoded = encoder_block(x, params, training, rng)
    pooled = dropout(mean_pool_time(encoded), hp.dropout, training, rng)
    hidden = dropout(relu(add(matmul(pooled, params["head_w"]), params["head_b"])), hp.dropout, training, rng)
    logits = add(matmul(hidden, params["out_w"]), params["out_b"])
    return softmax_rows(logits)


def predict_proba(params: ModelParams, ids: np.ndarray, batch_size: int = INFERENCE_BATCH) -> np.ndarray:
    """Inference-mode probabilities for an id array, scored in fixed-size chunks."""
    ids = np.asarray(ids)
    if len(ids) == 0:
        return np.zeros((0, params.hp.num_classes), dtype=params["out_b"].dtype)
    chunks = [forward(params, ids[start:start + batch_size], training=False).data
              for start in range(0, len(ids), batch_size)]
    return np.concatenate(chunks, axis=0)


def label_for(score: float) -> str:
    # a tie at exactly 0.5 classifies as malicious
    return LABELS[MALICIOUS] if score >= 0.5 else LABELS[0]


def predict_batch(params: ModelParams, vocab: Vocabulary, urls: Sequence[str],
                  batch_size: int = INFERENCE_BATCH) -> List[Tuple[str, float]]:
    """(label, malicious probability) for each URL, in input order."""
    ids = encode_batch(urls, vocab, params.hp.max_len)
    probs = predict_proba(params, ids, batch_size)
    scores = [float(p) for p in probs[:, MALICIOUS]]
    return [(label_for(score), score) for score in scores]


def predict(params: ModelParams, vocab: Vocabulary, url: str) -> Tuple[str, float]:
    """Classifies one URL; returns (label, probability of the malicious class)."""
    return predict_batch(params, vocab, [url])[0]
