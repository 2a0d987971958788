"""
Dense tensors with reverse-mode automatic differentiation.

Every primitive takes and returns ``Tensor`` objects. While a ``ComputeGraph``
is active (``with ComputeGraph() as graph:``) each primitive whose inputs need
gradients appends an ``OpRecord`` to it; ``backward(graph, loss)`` then walks the
records in reverse execution order. Outside a graph nothing is recorded, which
is how inference runs.

Payloads are float32 numpy arrays; float64 tensors are accepted throughout and
are only used for gradient verification.
"""

import math
import threading
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from url_transformer.errors import DataError, DimensionError, ParameterError, UsageError

DEFAULT_DTYPE = np.float32
PROB_FLOOR = 1e-7
MASK_VALUE = -1e9

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """Dense numeric array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"


@dataclass
class OpRecord:
    name: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ComputeGraph:
    """Ordered record of executed primitives, in topological (execution) order."""

    def __init__(self):
        self.ops: List[OpRecord] = []

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _graph_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.ops)

    def record(self, name, inputs, output, backward_fn) -> None:
        self.ops.append(OpRecord(name, tuple(inputs), output, backward_fn))


_local = threading.local()


def _graph_stack() -> List[ComputeGraph]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_graph() -> Optional[ComputeGraph]:
    stack = _graph_stack()
    return stack[-1] if stack else None


def _as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value), dtype=like.dtype if like is not None else None)


def _make_output(name, data, inputs, backward_fn) -> Tensor:
    out = Tensor(data, dtype=data.dtype if data.dtype in _FLOAT_DTYPES else DEFAULT_DTYPE)
    graph = active_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        graph.record(name, inputs, out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sums ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """
    Seeded PCG64 generator. Stream 0 is ``PCG64(seed)`` itself; other streams
    are independent children of the same seed.
    """
    if stream == 0:
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


# ---------------------------------------------------------------------------
# Elementwise and structural primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from e

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make_output("add", data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from e

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make_output("mul", data, (a, b), backward_fn)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = x.dtype.type(factor)
    data = x.data * factor

    def backward_fn(g):
        return (g * factor,)

    return _make_output("scale", data, (x,), backward_fn)


def tensor_sum(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward_fn(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _make_output("sum", data, (x,), backward_fn)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from e

    def backward_fn(g):
        return (g.reshape(x.shape),)

    return _make_output("reshape", data, (x,), backward_fn)


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = np.ascontiguousarray(np.transpose(x.data, axes))

    def backward_fn(g):
        return (np.transpose(g, inverse),)

    return _make_output("permute", data, (x,), backward_fn)


def transpose_last(x: Tensor) -> Tensor:
    if x.data.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 dimensions, got shape {x.shape}")
    axes = list(range(x.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(x, axes)


# ---------------------------------------------------------------------------
# Linear algebra and activations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product ``a @ b`` of [..., m, k] and [..., k, n] tensors; leading
    batch dimensions broadcast like ``numpy.matmul``.
    """
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}") from e

    def backward_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make_output("matmul", data, (a, b), backward_fn)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    positive = x.data > 0
    data = np.where(positive, x.data, x.dtype.type(0))

    def backward_fn(g):
        return (g * positive,)

    return _make_output("relu", data, (x,), backward_fn)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    if x.data.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax needs non-empty rows, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    data = exp / exp.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - inner),)

    return _make_output("softmax", data, (x,), backward_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalises each row of the last axis to zero mean and unit variance, then applies gamma/beta."""
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be > 0, got {eps}")
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise DimensionError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match width {width}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
    normed = centered * inv_std
    data = normed * gamma.data + beta.data

    def backward_fn(g):
        d_normed = g * gamma.data
        mean_d = d_normed.mean(axis=-1, keepdims=True)
        mean_dn = (d_normed * normed).mean(axis=-1, keepdims=True)
        dx = inv_std * (d_normed - mean_d - normed * mean_dn)
        d_gamma = (g * normed).reshape(-1, width).sum(axis=0)
        d_beta = g.reshape(-1, width).sum(axis=0)
        return dx, d_gamma, d_beta

    return _make_output("layer_norm", data, (x, gamma, beta), backward_fn)


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate); identity outside training."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("training-mode dropout needs a seeded generator")
    keep = rng.random(x.shape) >= rate
    factor = x.dtype.type(1.0 / (1.0 - rate))
    mask = keep.astype(x.dtype) * factor
    data = x.data * mask

    def backward_fn(g):
        return (g * mask,)

    return _make_output("dropout", data, (x,), backward_fn)


def mean_pool_time(x: Tensor) -> Tensor:
    """Arithmetic mean over the time axis (second to last)."""
    if x.data.ndim < 2 or x.shape[-2] < 1:
        raise DimensionError(f"mean_pool_time needs [..., L, d] with L >= 1, got shape {x.shape}")
    steps = x.shape[-2]
    data = x.data.mean(axis=-2)

    def backward_fn(g):
        expanded = np.expand_dims(g / x.dtype.type(steps), axis=-2)
        return (np.broadcast_to(expanded, x.shape).copy(),)

    return _make_output("mean_pool", data, (x,), backward_fn)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; ids of any integer shape."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DataError(f"token id out of range [0, {table.shape[0]}): min {ids.min()}, max {ids.max()}")
    index = ids.astype(np.int64)
    data = table.data[index]

    def backward_fn(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, index.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)

    return _make_output("embedding", data, (table,), backward_fn)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    softmax(q kᵀ / sqrt(d_k)) v over the last two axes.

    Args:
        q: [..., L, d_k]; k: [..., L, d_k]; v: [..., L, d_v].
        mask: optional boolean [L, L]; True marks a blocked query/key pair.
    """
    if q.data.ndim < 2 or k.data.ndim < 2 or v.data.ndim < 2:
        raise DimensionError(f"attention needs matrices, got q {q.shape}, k {k.shape}, v {v.shape}")
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention: q {q.shape} and k {k.shape} disagree on d_k")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: k {k.shape} and v {v.shape} disagree on length")
    d_k = q.shape[-1]
    scores = scale(matmul(q, transpose_last(k)), 1.0 / math.sqrt(d_k))
    if mask is not None:
        bias = np.where(mask, MASK_VALUE, 0.0).astype(scores.dtype)
        scores = add(scores, Tensor(bias))
    weights = softmax_rows(scores)
    return matmul(weights, v)


def causal_mask(length: int) -> np.ndarray:
    """Boolean [L, L] mask blocking attention to later positions."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """
    Mean negative log-likelihood of the true classes, probabilities clamped to [1e-7, 1].

    Returns a scalar tensor; ``.item()`` gives the float loss.
    """
    labels = np.asarray(labels)
    if probs.data.ndim != 2:
        raise DimensionError(f"cross_entropy expects [B, C] probabilities, got shape {probs.shape}")
    batch, classes = probs.shape
    if labels.shape != (batch,):
        raise DimensionError(f"cross_entropy: {labels.shape[0] if labels.ndim else 0} labels for batch of {batch}")
    if batch == 0:
        raise UsageError("cross_entropy over an empty batch")
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= classes:
        raise DataError(f"labels must be class ids in [0, {classes}), got {np.unique(labels).tolist()}")
    row_sums = probs.data.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-5):
        raise UsageError("cross_entropy expects rows of probabilities that sum to 1")
    rows = np.arange(batch)
    picked = probs.data[rows, labels]
    clamped = np.clip(picked, PROB_FLOOR, 1.0)
    data = np.asarray(-np.log(clamped).mean(), dtype=probs.dtype)

    def backward_fn(g):
        grad = np.zeros_like(probs.data)
        inside = picked >= PROB_FLOOR
        grad[rows, labels] = np.where(inside, -1.0 / (batch * clamped), 0.0)
        return (grad * g,)

    return _make_output("cross_entropy", data, (probs,), backward_fn)


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------

def backward(graph: ComputeGraph, loss: Tensor) -> None:
    """
    Accumulates d(loss)/d(leaf) into the ``grad`` of every leaf tensor that
    requires gradients. Gradients add to existing buffers; callers zero them
    between optimisation steps.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires gradients")
    if loss.is_leaf:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
        return
    if not any(op.output is loss for op in graph.ops):
        raise UsageError("loss was not produced by this graph")

    pending = {id(loss): np.ones_like(loss.data)}
    for op in reversed(graph.ops):
        upstream = pending.pop(id(op.output), None)
        if upstream is None:
            continue
        input_grads = op.backward_fn(upstream)
        for tensor, grad in zip(op.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            grad = np.asarray(grad, dtype=tensor.dtype)
            if tensor.is_leaf:
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            else:
                key = id(tensor)
                pending[key] = grad if key not in pending else pending[key] + grad
