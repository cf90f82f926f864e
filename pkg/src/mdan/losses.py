"""Task, adversarial and discriminator losses. Batch losses are means over the batch."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CLAMP = 1e-7


def _clamped(d) -> Tensor:
    return ad.clip(ad.as_tensor(d), CLAMP, 1.0 - CLAMP)


def loss_task(logits, y) -> Tensor:
    """Cross-entropy ``-log softmax(logits)[y]`` for ``[C]`` or ``[B, C]`` logits."""
    logits = ad.as_tensor(logits)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if logits.ndim == 1:
        logits = ad.reshape(logits, (1,) + logits.shape)
    c = logits.shape[-1]
    if y.shape[0] != logits.shape[0]:
        raise ValueError(f"{y.shape[0]} labels for {logits.shape[0]} logit rows")
    if np.any((y < 0) | (y >= c)):
        raise ValueError(f"class index out of range [0, {c}): {y[(y < 0) | (y >= c)][:5]}")
    return -ad.mean(ad.take(ad.log_softmax(logits), y))


def loss_dis(d_s, d_t) -> Tensor:
    """``-log D(f_s) - log(1 - D(f_t))``, inputs clamped to [1e-7, 1 - 1e-7]."""
    return -ad.mean(ad.log(_clamped(d_s))) - ad.mean(ad.log(1.0 - _clamped(d_t)))


def loss_adv(d_t) -> Tensor:
    """``-log D(f_t)``: small when the target features pass as source."""
    return -ad.mean(ad.log(_clamped(d_t)))


def domain_confusion_loss(d) -> Tensor:
    """Cross-entropy of ``[d, 1 - d]`` against the uniform domain label."""
    d = _clamped(d)
    return -0.5 * ad.mean(ad.log(d)) - 0.5 * ad.mean(ad.log(1.0 - d))
