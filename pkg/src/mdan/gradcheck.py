"""Central-difference verification of autodiff gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .autodiff import GradTape, NonFiniteError, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    n_checked: int

    def __str__(self) -> str:
        return (f"checked {self.n_checked} scalars, max relative error "
                f"{self.max_rel_error:.3e} at {self.worst_param}{list(self.worst_index)}")


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
               epsilon: float = 1e-6) -> GradCheckReport:
    """Compare autodiff gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` takes no arguments and must read the current values of
    ``params``; every scalar of every parameter is perturbed in turn.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-4], got {epsilon}")
    for p in params.values():
        p.requires_grad = True
        p.grad = None

    with GradTape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}
    for p in params.values():
        p.grad = None

    def evaluate(name, idx):
        try:
            value = loss_fn().item()
        except NonFiniteError as exc:
            raise NonFiniteError(f"loss is not finite when perturbing {name}{list(idx)}") from exc
        if not np.isfinite(value):
            raise NonFiniteError(f"loss is not finite when perturbing {name}{list(idx)}")
        return value

    worst = (0.0, "", ())
    count = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            idx = np.unravel_index(k, p.data.shape)
            flat[k] = orig + epsilon
            up = evaluate(name, idx)
            flat[k] = orig - epsilon
            down = evaluate(name, idx)
            flat[k] = orig
            numeric = (up - down) / (2.0 * epsilon)
            err = float(relative_error(a_flat[k], numeric))
            count += 1
            if err > worst[0]:
                worst = (err, name, tuple(int(i) for i in idx))
    return GradCheckReport(worst[0], worst[1], worst[2], count)


def check_network_gradients(seed: int = 0, epsilon: float = 1e-5, batch: int = 2) -> GradCheckReport:
    """Gradient check of the tiny network over every parameter.

    The loss sums the task loss (source path), the adversarial loss (target
    path) and the discriminator loss, so each parameter group receives a
    gradient. Adapters and the discriminator output layer start at zero in a
    fresh network; they get random values here, and SE hidden biases are made
    positive, so that no parameter group has a vanishing gradient that
    finite differences in float64 cannot resolve.
    """
    from .losses import loss_adv, loss_dis, loss_task
    from .network import Domain, NetworkConfig, build_network, discriminator_forward, forward

    cfg = NetworkConfig.tiny()
    net = build_network(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    for name, t in net.params.items():
        if ".adapter" in name:
            t.data[...] = rng.normal(0.0, 0.3, size=t.shape)
        elif name.endswith(".se.b1"):
            # keep SE hidden units away from the relu kink
            t.data[...] = rng.uniform(0.2, 0.5, size=t.shape)
        elif name.startswith("disc.out"):
            t.data[...] = rng.normal(0.0, 1.0, size=t.shape)
    x_s = rng.uniform(size=(batch, cfg.in_channels, cfg.input_size, cfg.input_size))
    x_t = rng.uniform(size=(batch, cfg.in_channels, cfg.input_size, cfg.input_size))
    y_s = rng.integers(0, cfg.num_classes, size=batch)

    def loss():
        logits, f_s = forward(net, x_s, Domain.SOURCE)
        _, f_t = forward(net, x_t, Domain.TARGET)
        d_s, d_t = discriminator_forward(net, f_s), discriminator_forward(net, f_t)
        return loss_task(logits, y_s) + loss_adv(d_t) + loss_dis(d_s, d_t)

    try:
        return grad_check(loss, dict(net.params.items()), epsilon)
    finally:
        net.params.set_trainable(())
