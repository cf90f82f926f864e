"""Domain-specific attention: squeeze-and-excitation and residual adapters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

OWNERS = ("source", "target")


@dataclass
class SEModule:
    """Channel reweighting ``f_c -> s_c * f_c`` with ``s = sigmoid(W2 relu(W1 gap(f) + b1) + b2)``."""

    w1: Tensor  # [C/r, C]
    b1: Tensor  # [C/r]
    w2: Tensor  # [C, C/r]
    b2: Tensor  # [C]
    owner: str = "source"

    @classmethod
    def zeros(cls, channels: int, reduction: int, owner: str = "source") -> "SEModule":
        if channels % reduction:
            raise ValueError(f"reduction ratio {reduction} does not divide {channels} channels")
        hidden = channels // reduction
        return cls(Tensor(np.zeros((hidden, channels))), Tensor(np.zeros(hidden)),
                   Tensor(np.zeros((channels, hidden))), Tensor(np.zeros(channels)), owner)

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    @property
    def reduction(self) -> int:
        return self.w1.shape[1] // self.w1.shape[0]


@dataclass
class ResidualAdapter:
    """Square mixing matrix ``alpha`` applied as a parallel 1x1 convolution."""

    alpha: Tensor  # [C, C]
    owner: str = "source"

    @classmethod
    def zeros(cls, channels: int, owner: str = "source") -> "ResidualAdapter":
        return cls(Tensor(np.zeros((channels, channels))), owner)

    @property
    def channels(self) -> int:
        return self.alpha.shape[0]


def se_weights(f: Tensor, se: SEModule) -> Tensor:
    """The excitation vector ``s`` ([C] or [B, C]) for feature map ``f``."""
    c = f.shape[-3]
    if c != se.channels:
        raise ValueError(f"SE module expects {se.channels} channels, feature map has {c}")
    d = ad.relu(ad.affine(ad.global_avg_pool(f), se.w1, se.b1))
    return ad.sigmoid(ad.affine(d, se.w2, se.b2))


def se_forward(f: Tensor, se: SEModule) -> Tensor:
    s = se_weights(f, se)
    return ad.mul(f, ad.reshape(s, s.shape + (1, 1)))


def adapter_forward(x: Tensor, shared_kernels: Tensor, adapter: ResidualAdapter,
                    bias: Optional[Tensor] = None, stride: int = 1, pad: int = 1) -> Tensor:
    """Shared convolution plus its domain-specific 1x1 residual: ``y = F(x) + A(F(x))``."""
    c = shared_kernels.shape[0]
    if adapter.alpha.shape != (c, c):
        raise ValueError(f"adapter alpha has shape {adapter.alpha.shape}, expected ({c}, {c})")
    f = ad.conv2d(x, shared_kernels, bias, stride, pad)
    a = ad.conv2d(f, ad.reshape(adapter.alpha, (c, c, 1, 1)))
    return ad.add(f, a)


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_attention(module: Union[SEModule, ResidualAdapter],
                   seed: Union[int, np.random.Generator]) -> None:
    """Initialize in place: He-uniform SE weights with zero biases, all-zero adapters."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if isinstance(module, ResidualAdapter):
        module.alpha.data[...] = 0.0
        return
    module.w1.data[...] = he_uniform(rng, module.w1.shape, module.w1.shape[1])
    module.b1.data[...] = 0.0
    module.w2.data[...] = he_uniform(rng, module.w2.shape, module.w2.shape[1])
    module.b2.data[...] = 0.0
