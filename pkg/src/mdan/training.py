"""Alternating adversarial training and the ablation strategies.

``ours`` is the three-step loop: the task loss updates the shared and
source-attention parameters, the adversarial loss updates only the target
attention (discriminator frozen), and the discriminator loss updates only the
discriminator (network frozen). All three steps of an iteration use the same
source/target batch pair.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape, NonFiniteError
from .config import load_into, read_config
from .data import Dataset
from .losses import domain_confusion_loss, loss_adv, loss_dis, loss_task
from .network import (Domain, Network, discriminator_forward, encode, forward,
                      partition, sync_target_attention)
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

STRATEGIES = ("ours", "joint", "shared-vs-specific", "source-only")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    lr_task: float = 1e-4
    lr_adv: float = 1e-5
    lr_dis: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    weight_decay: float = 2.5e-5
    strategy: str = "ours"
    use_adapter: bool = True
    use_se: bool = True
    seed: int = 0
    max_iters: int = 0  # 0 = no cap; otherwise stop after this many iterations
    warmup_epochs: int = 0  # source task step only, then target attention <- source attention
    warmup_lr: float = 0.0  # task learning rate during warm-up; 0 = lr_task

    def __post_init__(self):
        if min(self.lr_task, self.lr_adv, self.lr_dis) <= 0 or self.warmup_lr < 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs]")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")

    def adam(self) -> AdamState:
        return AdamState(self.beta1, self.beta2, 1e-8, self.weight_decay)

    @classmethod
    def from_file(cls, path: Union[str, Path], **overrides) -> "TrainConfig":
        return load_into(cls, read_config(path), str(path), **overrides)


@dataclass
class TrainLog:
    iterations: list = field(default_factory=list)  # (iteration, epoch, l_task, l_adv, l_dis)
    epochs: list = field(default_factory=list)  # (iteration, epoch, val_src_acc, val_tgt_acc)

    def record(self, it: int, epoch: int, l_task: float, l_adv: float, l_dis: float) -> None:
        if self.iterations and it <= self.iterations[-1][0]:
            raise ValueError("iteration index must increase")
        self.iterations.append((it, epoch, l_task, l_adv, l_dis))

    def column(self, name: str) -> np.ndarray:
        idx = {"l_task": 2, "l_adv": 3, "l_dis": 4}[name]
        return np.array([r[idx] for r in self.iterations])

    def write_csv(self, path: Union[str, Path]) -> None:
        """One row per iteration; the last row of each epoch also carries validation accuracies."""
        per_epoch = {e[0]: e for e in self.epochs}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "epoch", "l_task", "l_adv", "l_dis", "val_src_acc", "val_tgt_acc"])
            for it, ep, lt, la, ld in self.iterations:
                row = [it, ep, repr(lt), repr(la), repr(ld)]
                if it in per_epoch:
                    row += [repr(per_epoch[it][2]), repr(per_epoch[it][3])]
                else:
                    row += ["", ""]
                w.writerow(row)


def _batches(rng: np.random.Generator, n_target: int, n_source: int, batch: int):
    """Per epoch: a shuffled pass over the target set, source indices cycled."""
    src_perm, src_pos = rng.permutation(n_source), 0
    tgt_perm = rng.permutation(n_target)
    for start in range(0, n_target, batch):
        t_idx = tgt_perm[start:start + batch]
        s_idx = []
        while len(s_idx) < len(t_idx):
            if src_pos == n_source:
                src_perm, src_pos = rng.permutation(n_source), 0
            take = min(len(t_idx) - len(s_idx), n_source - src_pos)
            s_idx.extend(src_perm[src_pos:src_pos + take])
            src_pos += take
        yield np.array(s_idx), t_idx


def _check_inputs(net: Network, D_s: Dataset, D_t: Dataset) -> None:
    if len(D_s) == 0 or len(D_t) == 0:
        raise TrainingError("source and target training sets must be non-empty")
    if not D_s.is_labeled:
        raise TrainingError("source training data must be fully labeled")
    if net.cfg.use_adapter is False and net.cfg.use_se is False:
        log.info("no attention modules: target path equals source path")


def _step(net: Network, subset: str, state: AdamState, lr: float, loss_fn) -> float:
    params = partition(net, subset)
    net.params.set_trainable(params)
    with GradTape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    if params:
        adam_step(params, state, lr)
    net.params.set_trainable(())
    return loss.item()


def _accuracy(net: Network, data: Optional[Dataset], domain: Domain) -> float:
    if data is None or len(data) == 0:
        return float("nan")
    from .evaluation import predict
    return float(np.mean(predict(net, data.images, domain) == data.labels) * 100.0)


class _Runner:
    def __init__(self, net, D_s, D_t, cfg, val_s, val_t):
        _check_inputs(net, D_s, D_t)
        if (net.cfg.use_adapter, net.cfg.use_se) != (cfg.use_adapter, cfg.use_se):
            raise TrainingError("attention flags of network and training config disagree")
        self.net, self.cfg = net, cfg
        self.xs, self.ys = D_s.images, D_s.labels
        self.xt = D_t.images  # target labels are never read
        self.val_s, self.val_t = val_s, val_t
        self.log = TrainLog()
        self.states = {k: cfg.adam() for k in ("task", "adv", "dis", "model", "warmup")}

    def run(self, iteration_fn, epoch_hook=None) -> TrainLog:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        it = 0
        for epoch in range(cfg.epochs):
            if epoch_hook is not None:
                epoch_hook(epoch)
            for s_idx, t_idx in _batches(rng, len(self.xt), len(self.xs), cfg.batch_size):
                it += 1
                try:
                    losses = iteration_fn(self.xs[s_idx], self.ys[s_idx], self.xt[t_idx])
                except NonFiniteError as exc:
                    raise TrainingError(f"non-finite value at iteration {it} (epoch {epoch}): {exc}") from exc
                self.log.record(it, epoch, *losses)
                if cfg.max_iters and it >= cfg.max_iters:
                    break
            if self.val_s is not None or self.val_t is not None:
                acc_s = _accuracy(self.net, self.val_s, Domain.SOURCE)
                acc_t = _accuracy(self.net, self.val_t, Domain.TARGET)
                self.log.epochs.append((it, epoch, acc_s, acc_t))
                log.info("epoch %d: val src %.2f tgt %.2f", epoch, acc_s, acc_t)
            if cfg.max_iters and it >= cfg.max_iters:
                break
        return self.log

    # -- step builders

    def task_step(self, subset, xs, ys, state="task", lr=None):
        net = self.net
        return _step(net, subset, self.states[state], lr or self.cfg.lr_task,
                     lambda: loss_task(forward(net, xs, Domain.SOURCE)[0], ys))

    def dis_step(self, xs, xt):
        net = self.net
        net.params.set_trainable(())
        f_s = encode(net, xs, Domain.SOURCE)
        f_t = encode(net, xt, Domain.TARGET)
        return _step(net, "disc", self.states["dis"], self.cfg.lr_dis,
                     lambda: loss_dis(discriminator_forward(net, f_s), discriminator_forward(net, f_t)))


def _warmup(net: Network, cfg: TrainConfig):
    """Phase flag and epoch hook shared by all adversarial strategies.

    During the first ``warmup_epochs`` only the source task step runs; at the
    end the target attention is copied from the source attention.
    """
    warm = {"on": cfg.warmup_epochs > 0, "lr": cfg.warmup_lr or cfg.lr_task}

    def hook(epoch):
        if warm["on"] and epoch == cfg.warmup_epochs:
            sync_target_attention(net)
            warm["on"] = False
            log.info("warm-up done after %d epochs; target attention copied from source", epoch)

    return warm, hook


def train_alg1(net: Network, D_s: Dataset, D_t: Dataset, cfg: TrainConfig,
               val_s: Optional[Dataset] = None, val_t: Optional[Dataset] = None) -> tuple[Network, TrainLog]:
    """Three-step alternating training (strategy ``ours``), or ``source-only``
    which runs just the first step.

    With ``warmup_epochs`` > 0 the first epochs run step 1 only; the target
    attention is then initialized from the trained source attention before
    the adversarial steps begin.
    """
    if cfg.strategy not in ("ours", "source-only"):
        raise TrainingError(f"train_alg1 runs strategy 'ours' or 'source-only', got {cfg.strategy!r}")
    r = _Runner(net, D_s, D_t, cfg, val_s, val_t)
    warm, hook = _warmup(net, cfg)

    def iteration(xs, ys, xt):
        l_task = r.task_step("sh+s", xs, ys, lr=warm["lr"] if warm["on"] else None)
        if cfg.strategy == "source-only" or warm["on"]:
            return l_task, float("nan"), float("nan")
        l_adv = _step(net, "t", r.states["adv"], cfg.lr_adv,
                      lambda: loss_adv(discriminator_forward(net, encode(net, xt, Domain.TARGET))))
        l_dis = r.dis_step(xs, xt)
        return l_task, l_adv, l_dis

    return net, r.run(iteration, hook)


def train_ablation(net: Network, D_s: Dataset, D_t: Dataset, cfg: TrainConfig,
                   val_s: Optional[Dataset] = None, val_t: Optional[Dataset] = None) -> tuple[Network, TrainLog]:
    """The ``joint`` and ``shared-vs-specific`` strategies; ``ours`` is delegated."""
    if cfg.strategy in ("ours", "source-only"):
        return train_alg1(net, D_s, D_t, cfg, val_s, val_t)
    r = _Runner(net, D_s, D_t, cfg, val_s, val_t)
    warm, hook = _warmup(net, cfg)

    if cfg.strategy == "joint":
        def adapt_iteration(xs, ys, xt):
            parts = {}

            def model_loss():
                parts["task"] = loss_task(forward(net, xs, Domain.SOURCE)[0], ys)
                parts["adv"] = loss_adv(discriminator_forward(net, encode(net, xt, Domain.TARGET)))
                return parts["task"] + parts["adv"]

            _step(net, "sh+s+t", r.states["model"], cfg.lr_task, model_loss)
            l_dis = r.dis_step(xs, xt)
            return parts["task"].item(), parts["adv"].item(), l_dis
    else:
        def adapt_iteration(xs, ys, xt):
            l_task = r.task_step("sh", xs, ys)

            def confusion():
                d_s = discriminator_forward(net, encode(net, xs, Domain.SOURCE))
                d_t = discriminator_forward(net, encode(net, xt, Domain.TARGET))
                return domain_confusion_loss(ad.concat([d_s, d_t]))

            l_conf = _step(net, "s+t", r.states["adv"], cfg.lr_adv, confusion)
            l_dis = r.dis_step(xs, xt)
            return l_task, l_conf, l_dis

    def iteration(xs, ys, xt):
        if warm["on"]:
            return r.task_step("sh+s", xs, ys, state="warmup", lr=warm["lr"]), float("nan"), float("nan")
        return adapt_iteration(xs, ys, xt)

    return net, r.run(iteration, hook)
