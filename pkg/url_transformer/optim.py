"""
Adam optimiser with bias correction.
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from url_transformer.errors import UsageError


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    # first and second moment estimates, keyed by parameter name
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState) -> None:
    """
    Applies one Adam update in place.

    Args:
        params: name -> parameter array, updated in place.
        grads: name -> gradient array of the same shape; a missing or None
            gradient counts as zero.
        state: moment buffers and step counter, updated in place.
    """
    for name, value in params.items():
        grad = grads.get(name)
        if grad is not None and np.shape(grad) != value.shape:
            raise UsageError(f"adam_step: gradient for {name!r} has shape {np.shape(grad)}, parameter {value.shape}")
        if name in state.m and state.m[name].shape != value.shape:
            raise UsageError(f"adam_step: moment buffer for {name!r} has shape {state.m[name].shape}, parameter {value.shape}")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    step_size = state.learning_rate / bc1

    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(value)
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        denom = np.sqrt(v / bc2) + state.epsilon
        value -= (step_size * m / denom).astype(value.dtype)
