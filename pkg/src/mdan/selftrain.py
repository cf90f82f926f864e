"""Discriminator-gated pseudo-labelling and target-attention fine-tuning."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .autodiff import softmax, Tensor
from .config import load_into, read_config
from .data import Dataset
from .losses import loss_task
from .network import Domain, Network, discriminator_forward, forward
from .optim import AdamState
from .training import _step

log = logging.getLogger(__name__)


@dataclass
class SelfTrainConfig:
    tau_hi: float = 0.7  # accept discriminator-fooling samples at or above this confidence
    tau_lo: float = 0.6  # accept recognised target samples at or below this confidence
    tau_m: float = 0.8  # model confidence floor
    epochs: int = 1
    lr: float = 1e-5
    batch_size: int = 32
    beta1: float = 0.5
    beta2: float = 0.999
    weight_decay: float = 2.5e-5
    seed: int = 0

    def __post_init__(self):
        if not 0.5 <= self.tau_lo <= self.tau_hi < 1.0:
            raise ValueError(f"need 0.5 <= tau_lo <= tau_hi < 1, got tau_lo={self.tau_lo}, tau_hi={self.tau_hi}")
        if not 0.0 < self.tau_m < 1.0:
            raise ValueError(f"tau_m must lie in (0, 1), got {self.tau_m}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("lr must be positive, epochs and batch_size >= 1")

    @classmethod
    def from_file(cls, path: Union[str, Path], **overrides) -> "SelfTrainConfig":
        return load_into(cls, read_config(path), str(path), **overrides)


@dataclass
class PseudoLabelRecord:
    id: int
    yhat: int
    p_m: float
    d: float
    disc_says_source: bool
    p_d: float
    accepted: bool
    reason: str  # empty when accepted


def acceptance(p_m: float, d: float, cfg: SelfTrainConfig) -> tuple[bool, str]:
    """The pseudo-label rule as a pure function of model confidence and D output."""
    # compare d itself against the thresholds: for d < 0.5, p_d = 1 - d <= tau_lo
    # is d >= 1 - tau_lo, which avoids rounding in 1 - d at the boundary
    if d >= 0.5:
        if d < cfg.tau_hi:
            return False, "discriminator-unsure"
    elif d < 1.0 - cfg.tau_lo:
        return False, "discriminator-recognised"
    if p_m < cfg.tau_m:
        return False, "model-confidence"
    return True, ""


def records_from_outputs(ids, probs: np.ndarray, d: np.ndarray, cfg: SelfTrainConfig) -> list[PseudoLabelRecord]:
    out = []
    for i, sid in enumerate(ids):
        yhat = int(np.argmax(probs[i]))
        p_m = float(probs[i, yhat])
        di = float(d[i])
        ok, why = acceptance(p_m, di, cfg)
        out.append(PseudoLabelRecord(int(sid), yhat, p_m, di, di >= 0.5, max(di, 1.0 - di), ok, why))
    return sorted(out, key=lambda r: r.id)


def generate_pseudo_labels(net: Network, D_t: Dataset, cfg: SelfTrainConfig,
                           batch: int = 100) -> tuple[list[tuple[int, int]], list[PseudoLabelRecord]]:
    """Return (accepted (id, label) pairs, audit record for every sample)."""
    if cfg.tau_m <= 1.0 / net.cfg.num_classes:
        raise ValueError(f"tau_m={cfg.tau_m} must exceed 1/C = {1.0 / net.cfg.num_classes:.4f}")
    probs, ds = [], []
    for i in range(0, len(D_t), batch):
        logits, feats = forward(net, D_t.images[i:i + batch], Domain.TARGET)
        probs.append(softmax(logits).data)
        ds.append(discriminator_forward(net, feats).data)
    records = records_from_outputs(D_t.ids, np.concatenate(probs), np.concatenate(ds), cfg)
    return [(r.id, r.yhat) for r in records if r.accepted], records


def write_audit(records: list[PseudoLabelRecord], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "yhat", "p_m", "d", "p_d", "verdict", "reason"])
        for r in records:
            w.writerow([r.id, r.yhat, repr(r.p_m), repr(r.d), repr(r.p_d),
                        "accepted" if r.accepted else "rejected", r.reason])


def pseudo_dataset(D_t: Dataset, pseudo: list[tuple[int, int]]) -> Dataset:
    """The accepted subset of ``D_t`` relabelled with its pseudo-labels."""
    labels = dict(pseudo)
    mask = np.array([int(i) in labels for i in D_t.ids], dtype=bool)
    sub = D_t._take(mask)
    sub.labels = np.array([labels[int(i)] for i in sub.ids], dtype=np.int64)
    return sub


def selftrain_finetune(net: Network, pseudo: Dataset, cfg: SelfTrainConfig) -> tuple[Network, list[float]]:
    """Cross-entropy fine-tuning of the target attention only, on frozen pseudo-labels.

    Returns the network and per-iteration losses; an empty pseudo set is a
    logged no-op.
    """
    if len(pseudo) == 0:
        log.warning("no pseudo-labelled samples; self-training skipped")
        return net, []
    if not pseudo.is_labeled:
        raise ValueError("pseudo-labelled set has missing labels")
    state = AdamState(cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(pseudo))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = pseudo.images[idx], pseudo.labels[idx]
            losses.append(_step(net, "t", state, cfg.lr,
                                lambda: loss_task(forward(net, x, Domain.TARGET)[0], y)))
    return net, losses
