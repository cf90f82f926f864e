"""Small reverse-mode autodiff over float64 numpy arrays.

Operations are recorded on the active :class:`GradTape` only when at least one
input requires a gradient; outside a tape every op is a plain forward pass.
All layer ops accept a leading batch axis; the unbatched shapes
(``[C, H, W]`` images, ``[N]`` vectors) are handled as a batch of one.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ValueError(f"tensor {name or ''} has an empty dimension: {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value in tensor {name or '<anonymous>'}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar, used mostly by the losses
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class GradTape:
    """Ordered record of differentiable operations.

    Usage::

        with GradTape() as tape:
            loss = some_function(params)
        tape.backward(loss)

    ``backward`` walks the record in exact reverse execution order and
    accumulates gradients additively into every tensor that requires one.
    """

    _stack: list["GradTape"] = []

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "GradTape":
        GradTape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        GradTape._stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for t, gi in zip(node.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                t.grad = gi if t.grad is None else t.grad + gi
        # intermediates keep no gradient once the pass is done
        for node in self.nodes:
            node.out.grad = None
        self.nodes = []


def _active_tape() -> Optional[GradTape]:
    return GradTape._stack[-1] if GradTape._stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.nodes.append(_Node(out, inputs, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise NonFiniteError("log of a non-positive value")
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes only where the value was inside."""
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _make(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def pointwise(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown pointwise kind {kind!r}")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # derivative at exactly 0 is 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


# ---------------------------------------------------------------- reductions / shape


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return _make(np.array(x.data.mean()), (x,),
                 lambda g: (np.full(shape, float(g) / n),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def take(x: Tensor, index: np.ndarray) -> Tensor:
    """Pick ``x[i, index[i]]`` from a ``[B, C]`` tensor."""
    idx = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return _make(x.data[rows, idx], (x,), back)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def global_avg_pool(f: Tensor) -> Tensor:
    """Per-channel spatial mean of ``[C, H, W]`` or ``[B, C, H, W]``."""
    if f.ndim not in (3, 4):
        raise ValueError(f"global_avg_pool expects rank 3 or 4, got shape {f.shape}")
    shape = f.shape
    hw = shape[-1] * shape[-2]
    out = f.data.mean(axis=(-2, -1))
    return _make(out, (f,), lambda g: (np.broadcast_to(g[..., None, None] / hw, shape).copy(),))


def softmax(z: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by subtracting the max."""
    e = np.exp(z.data - z.data.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (z,), back)


def log_softmax(z: Tensor) -> Tensor:
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def back(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(y, (z,), back)


# ---------------------------------------------------------------- layers


def affine(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``y = W x + b`` for ``x`` of shape ``[N]`` or ``[B, N]``."""
    if W.ndim != 2:
        raise ValueError(f"affine weight must be rank 2, got {W.shape}")
    m, n = W.shape
    if x.shape[-1] != n:
        raise ValueError(f"affine input dim {x.shape[-1]} does not match weight columns {n}")
    if b is not None and b.shape != (m,):
        raise ValueError(f"affine bias shape {b.shape} does not match weight rows {m}")
    xd, wd = x.data, W.data
    y = xd @ wd.T
    if b is not None:
        y = y + b.data

    def back(g):
        gx = g @ wd
        gw = np.outer(g, xd) if xd.ndim == 1 else g.T @ xd
        gb = g if g.ndim == 1 else g.sum(axis=0)
        return gx, gw, gb

    inputs = (x, W) if b is None else (x, W, b)
    return _make(y, inputs, back)


def conv2d(x: Tensor, kernels: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` ([C', H', W'] or [B, C', H', W']) with ``kernels`` [C, C', h, w]."""
    if x.ndim == 3:
        out = conv2d(reshape(x, (1,) + x.shape), kernels, bias, stride, pad)
        return reshape(out, out.shape[1:])
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be rank 3 or 4, got shape {x.shape}")
    if kernels.ndim != 4:
        raise ValueError(f"conv2d kernels must be rank 4, got shape {kernels.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n, cin, hin, win = x.shape
    cout, kcin, kh, kw = kernels.shape
    if kcin != cin:
        raise ValueError(f"conv2d input channels: input has {cin}, kernels expect {kcin}")
    if kh > hin + 2 * pad:
        raise ValueError(f"conv2d kernel height {kh} exceeds padded input height {hin + 2 * pad}")
    if kw > win + 2 * pad:
        raise ValueError(f"conv2d kernel width {kw} exceeds padded input width {win + 2 * pad}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d bias has {bias.shape}, expected ({cout},) output channels")
    ho, wo = _out_hw((hin, win), (kh, kw), stride, pad)

    # channel-major im2col: cols[C', kh, kw, N, Ho, Wo], then one GEMM
    xc = x.data.transpose(1, 0, 2, 3)
    if pad:
        xp = np.zeros((cin, n, hin + 2 * pad, win + 2 * pad))
        xp[:, :, pad:pad + hin, pad:pad + win] = xc
    else:
        xp = xc
    if kh == 1 and kw == 1:
        cols = np.ascontiguousarray(xp[:, :, :stride * ho:stride, :stride * wo:stride])
    else:
        cols = np.empty((cin, kh, kw, n, ho, wo))
        for i in range(kh):
            for j in range(kw):
                cols[:, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(cin * kh * kw, n * ho * wo)
    wd = kernels.data
    w2 = wd.reshape(cout, cin * kh * kw)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))

    def back(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, n * ho * wo)
        gw = (g2 @ cols.T).reshape(wd.shape) if kernels.requires_grad else None
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(cin, kh, kw, n, ho, wo)
            if kh == 1 and kw == 1 and stride == 1 and pad == 0:
                gxp = gcols.reshape(cin, n, ho, wo)
            else:
                gxp = np.zeros((cin, n, hin + 2 * pad, win + 2 * pad))
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
            gx = np.ascontiguousarray(gxp[:, :, pad:pad + hin, pad:pad + win].transpose(1, 0, 2, 3))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return _make(out, inputs, back)


def _out_hw(in_hw, k_hw, stride, pad) -> tuple:
    return tuple((i + 2 * pad - k) // stride + 1 for i, k in zip(in_hw, k_hw))
