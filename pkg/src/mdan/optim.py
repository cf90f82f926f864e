"""Adam with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import NonFiniteError, Tensor


@dataclass
class AdamState:
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 2.5e-5
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float) -> None:
    """One Adam update of ``params`` in place, then clear their gradients.

    Weight decay is decoupled: ``p <- p - lr * wd * p`` happens before the
    moment-based step and does not enter the moment estimates.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        if p.grad.shape != p.data.shape:
            raise ValueError(f"gradient of {name!r} has shape {p.grad.shape}, parameter {p.data.shape}")
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"gradient of {name!r} is not finite")

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        with np.errstate(over="raise"):
            try:
                v += (1.0 - state.beta2) * g * g
            except FloatingPointError:
                raise NonFiniteError(f"second moment of {name!r} overflowed") from None
        if state.weight_decay:
            p.data -= lr * state.weight_decay * p.data
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None
