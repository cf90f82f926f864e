"""Multi-domain attention classifier and domain discriminator.

A shared residual backbone carries one SE module and one residual adapter per
residual block for each domain. Parameter names carry their ownership tag as a
prefix (``sh.``, ``src.``, ``tgt.``, ``disc.``), which is also how they are
stored in checkpoints.
"""

from __future__ import annotations

import contextlib
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

import numpy as np

from . import autodiff as ad
from .attention import ResidualAdapter, SEModule, adapter_forward, he_uniform, se_forward, se_weights
from .autodiff import Tensor
from .tensorio import FormatError, read_tensor, write_tensor

TAGS = ("shared", "source", "target", "discriminator")
PREFIX = {"shared": "sh.", "source": "src.", "target": "tgt.", "discriminator": "disc."}
_SUBSET_KEYS = {"sh": "shared", "s": "source", "t": "target", "disc": "discriminator"}

CHECKPOINT_MAGIC = b"MDAN"
CHECKPOINT_VERSION = 1


class Domain(str, Enum):
    SOURCE = "source"
    TARGET = "target"

    @property
    def prefix(self) -> str:
        return "src." if self is Domain.SOURCE else "tgt."


def tag_of(name: str) -> str:
    for tag, prefix in PREFIX.items():
        if name.startswith(prefix):
            return tag
    raise KeyError(f"parameter name {name!r} carries no ownership prefix")


class ParamStore:
    """Ordered name -> Tensor registry with ownership tags and an access audit."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._audit: Optional[set] = None

    def add(self, name: str, value: np.ndarray) -> Tensor:
        tag_of(name)
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.ascontiguousarray(value, dtype=np.float64), name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        if self._audit is not None:
            self._audit.add(name)
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def with_tags(self, tags: Iterable[str]) -> "OrderedDict[str, Tensor]":
        tags = set(tags)
        return OrderedDict((n, t) for n, t in self._params.items() if tag_of(n) in tags)

    def n_scalars(self, tags: Optional[Iterable[str]] = None) -> int:
        params = self._params if tags is None else self.with_tags(tags)
        return sum(t.data.size for t in params.values())

    @contextlib.contextmanager
    def audit(self) -> Iterator[set]:
        """Record the names of all parameters read inside the block."""
        seen: set = set()
        prev, self._audit = self._audit, seen
        try:
            yield seen
        finally:
            self._audit = prev

    def set_trainable(self, names: Iterable[str]) -> None:
        names = set(names)
        for n, t in self._params.items():
            t.requires_grad = n in names
            t.grad = None

    def snapshot(self) -> dict:
        return {n: t.data.copy() for n, t in self._params.items()}


@dataclass
class NetworkConfig:
    in_channels: int = 3
    input_size: int = 32
    widths: tuple = (16, 32, 64)
    blocks_per_stage: int = 2
    num_classes: int = 4
    se_reduction: int = 4
    disc_hidden: tuple = (64, 64)
    use_adapter: bool = True
    use_se: bool = True

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.disc_hidden = tuple(int(w) for w in self.disc_hidden)
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if not self.widths or self.blocks_per_stage < 1:
            raise ValueError("need at least one stage with at least one block")
        for w in self.widths:
            if w % self.se_reduction:
                raise ValueError(f"stage width {w} is not divisible by SE reduction {self.se_reduction}")
        if self.input_size < 2 ** len(self.widths):
            raise ValueError(f"input size {self.input_size} too small for {len(self.widths)} stages")

    @classmethod
    def tiny(cls, **kw) -> "NetworkConfig":
        """Small enough that every scalar can be finite-difference checked."""
        base = dict(in_channels=3, input_size=8, widths=(4, 8), blocks_per_stage=1,
                    num_classes=3, se_reduction=4, disc_hidden=(8, 8))
        base.update(kw)
        return cls(**base)

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    def block_names(self) -> list[tuple[str, int, int, int]]:
        """(name, in_width, out_width, stride) for every residual block."""
        out, cin = [], self.widths[0]
        for i, w in enumerate(self.widths):
            for j in range(self.blocks_per_stage):
                stride = 2 if (i > 0 and j == 0) else 1
                out.append((f"s{i}b{j}", cin, w, stride))
                cin = w
        return out

    def encode(self) -> np.ndarray:
        vals = [self.in_channels, self.input_size, self.blocks_per_stage, self.num_classes,
                self.se_reduction, int(self.use_adapter), int(self.use_se),
                len(self.widths), *self.widths, len(self.disc_hidden), *self.disc_hidden]
        return np.array(vals, dtype=np.float64)

    @classmethod
    def decode(cls, v: np.ndarray) -> "NetworkConfig":
        v = [int(round(x)) for x in np.asarray(v).ravel()]
        try:
            nw = v[7]
            widths = v[8:8 + nw]
            nd = v[8 + nw]
            disc = v[9 + nw:9 + nw + nd]
            if len(widths) != nw or len(disc) != nd:
                raise IndexError
        except IndexError:
            raise FormatError("malformed network config record") from None
        return cls(in_channels=v[0], input_size=v[1], blocks_per_stage=v[2], num_classes=v[3],
                   se_reduction=v[4], use_adapter=bool(v[5]), use_se=bool(v[6]),
                   widths=tuple(widths), disc_hidden=tuple(disc))


@dataclass
class Network:
    cfg: NetworkConfig
    params: ParamStore = field(default_factory=ParamStore)

    def forward(self, x, domain: Union[Domain, str]) -> tuple[Tensor, Tensor]:
        return forward(self, x, domain)

    def discriminator(self, features: Tensor) -> Tensor:
        return discriminator_forward(self, features)

    def partition(self, subset: str) -> "OrderedDict[str, Tensor]":
        return partition(self, subset)


def _he_normal(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def build_network(cfg: NetworkConfig, seed: int = 0) -> Network:
    """Deterministic construction; source and target attention start identical."""
    rng = np.random.default_rng(seed)
    net = Network(cfg)
    p = net.params
    w0 = cfg.widths[0]
    p.add("sh.stem.w", _he_normal(rng, (w0, cfg.in_channels, 3, 3), cfg.in_channels * 9))
    p.add("sh.stem.b", np.zeros(w0))
    attention = []
    branch_scale = 1.0 / np.sqrt(len(cfg.block_names()))
    for name, cin, cout, stride in cfg.block_names():
        p.add(f"sh.{name}.conv1.w", _he_normal(rng, (cout, cin, 3, 3), cin * 9))
        p.add(f"sh.{name}.conv1.b", np.zeros(cout))
        # residual branches start small so the un-normalized stack keeps its scale
        p.add(f"sh.{name}.conv2.w", _he_normal(rng, (cout, cout, 3, 3), cout * 9) * branch_scale)
        p.add(f"sh.{name}.conv2.b", np.zeros(cout))
        if stride != 1 or cin != cout:
            p.add(f"sh.{name}.proj.w", _he_normal(rng, (cout, cin, 1, 1), cin))
            p.add(f"sh.{name}.proj.b", np.zeros(cout))
        if cfg.use_adapter:
            attention.append((f"{name}.adapter.alpha", np.zeros((cout, cout))))
        if cfg.use_se:
            hidden = cout // cfg.se_reduction
            attention.append((f"{name}.se.w1", he_uniform(rng, (hidden, cout), cout)))
            attention.append((f"{name}.se.b1", np.zeros(hidden)))
            attention.append((f"{name}.se.w2", he_uniform(rng, (cout, hidden), hidden)))
            attention.append((f"{name}.se.b2", np.zeros(cout)))
    feat = cfg.feature_dim
    p.add("sh.head.w", he_uniform(rng, (cfg.num_classes, feat), feat) / np.sqrt(2.0))
    p.add("sh.head.b", np.zeros(cfg.num_classes))
    for domain in ("src.", "tgt."):
        for suffix, value in attention:
            p.add(domain + suffix, value.copy())
    prev = feat
    for i, h in enumerate(cfg.disc_hidden):
        p.add(f"disc.fc{i}.w", _he_normal(rng, (h, prev), prev))
        p.add(f"disc.fc{i}.b", np.zeros(h))
        prev = h
    p.add("disc.out.w", np.zeros((1, prev)))
    p.add("disc.out.b", np.zeros(1))
    return net


def _as_input(net: Network, x) -> Tensor:
    x = ad.as_tensor(x)
    c, s = net.cfg.in_channels, net.cfg.input_size
    if x.shape[-3:] != (c, s, s) or x.ndim not in (3, 4):
        raise ValueError(f"input shape {x.shape} does not match configured ({c}, {s}, {s})")
    return x


INPUT_OFFSET = 0.5


def stem(net: Network, x: Tensor) -> Tensor:
    """Centre pixels around zero, then a stride-2 3x3 convolution and relu."""
    p = net.params
    return ad.relu(ad.conv2d(ad.sub(x, INPUT_OFFSET), p["sh.stem.w"], p["sh.stem.b"], 2, 1))


def residual_block(net: Network, h: Tensor, name: str, stride: int, domain: Domain,
                   trace: Optional[dict] = None) -> Tensor:
    """conv1 -> relu -> conv2 (+adapter) -> SE -> add shortcut -> relu.

    ``trace``, when given, receives the pre-SE feature map and the SE weights.
    """
    p, cfg = net.params, net.cfg
    dp = domain.prefix
    r = ad.relu(ad.conv2d(h, p[f"sh.{name}.conv1.w"], p[f"sh.{name}.conv1.b"], stride, 1))
    if cfg.use_adapter:
        r = adapter_forward(r, p[f"sh.{name}.conv2.w"], ResidualAdapter(p[f"{dp}{name}.adapter.alpha"]),
                            p[f"sh.{name}.conv2.b"], 1, 1)
    else:
        r = ad.conv2d(r, p[f"sh.{name}.conv2.w"], p[f"sh.{name}.conv2.b"], 1, 1)
    if cfg.use_se:
        se = SEModule(p[f"{dp}{name}.se.w1"], p[f"{dp}{name}.se.b1"],
                      p[f"{dp}{name}.se.w2"], p[f"{dp}{name}.se.b2"])
        if trace is not None:
            trace["pre_se"] = r
            trace["se_weights"] = se_weights(r, se)
        r = se_forward(r, se)
    if f"sh.{name}.proj.w" in p:
        h = ad.conv2d(h, p[f"sh.{name}.proj.w"], p[f"sh.{name}.proj.b"], stride, 0)
    return ad.relu(ad.add(h, r))


def feature_maps(net: Network, x, domain: Union[Domain, str]) -> Iterator[tuple[str, Tensor, Tensor]]:
    """Yield (block name, block input, block output) through the encoder."""
    domain = Domain(domain)
    p = net.params
    h = stem(net, _as_input(net, x))
    for name, _, _, stride in net.cfg.block_names():
        out = residual_block(net, h, name, stride, domain)
        yield name, h, out
        h = out


def encode(net: Network, x, domain: Union[Domain, str]) -> Tensor:
    h = None
    for _, _, h in feature_maps(net, x, domain):
        pass
    return ad.global_avg_pool(h)


def classify(net: Network, features: Tensor) -> Tensor:
    return ad.affine(features, net.params["sh.head.w"], net.params["sh.head.b"])


def forward(net: Network, x, domain: Union[Domain, str]) -> tuple[Tensor, Tensor]:
    """Return (logits, pooled features) through the selected domain's attention."""
    features = encode(net, x, domain)
    return classify(net, features), features


def discriminator_forward(net: Network, features: Tensor) -> Tensor:
    """Probability that ``features`` came from the source domain; shape [] or [B]."""
    p = net.params
    if features.shape[-1] != net.cfg.feature_dim:
        raise ValueError(f"discriminator expects feature dim {net.cfg.feature_dim}, got {features.shape[-1]}")
    h = features
    for i in range(len(net.cfg.disc_hidden)):
        h = ad.relu(ad.affine(h, p[f"disc.fc{i}.w"], p[f"disc.fc{i}.b"]))
    z = ad.affine(h, p["disc.out.w"], p["disc.out.b"])
    return ad.sigmoid(ad.reshape(z, z.shape[:-1]))


def partition(net: Network, subset: str) -> "OrderedDict[str, Tensor]":
    """Parameters for a subset expression such as ``"sh+s"``, ``"t"`` or ``"disc"``."""
    try:
        tags = {_SUBSET_KEYS[k.strip()] for k in subset.split("+")}
    except KeyError:
        raise ValueError(f"unknown parameter subset {subset!r}") from None
    return net.params.with_tags(tags)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(net: Network, path: Union[str, Path]) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(net.params) + 1))
        write_tensor(fh, "cfg.network", net.cfg.encode())
        for name, t in net.params.items():
            write_tensor(fh, name, t.data)


def load_checkpoint(path: Union[str, Path], expected: Optional[NetworkConfig] = None) -> Network:
    """Read a checkpoint; when ``expected`` is given the stored architecture must match it."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, not an MDAN checkpoint")
        head = fh.read(8)
        if len(head) != 8:
            raise FormatError(f"{path}: truncated header")
        version, count = struct.unpack("<II", head)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        records = [read_tensor(fh) for _ in range(count)]
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} records")
    if not records or records[0][0] != "cfg.network":
        raise FormatError(f"{path}: missing network config record")
    cfg = NetworkConfig.decode(records[0][1])
    if expected is not None and cfg != expected:
        diffs = [k for k in cfg.__dataclass_fields__ if getattr(cfg, k) != getattr(expected, k)]
        raise FormatError(f"{path}: checkpoint architecture differs from expected in {diffs}")
    net = build_network(cfg, seed=0)
    stored = dict(records[1:])
    if set(stored) != set(net.params.names()):
        missing = sorted(set(net.params.names()) - set(stored))
        extra = sorted(set(stored) - set(net.params.names()))
        raise FormatError(f"{path}: parameter names mismatch (missing {missing[:3]}, extra {extra[:3]})")
    for name, t in net.params.items():
        if stored[name].shape != t.shape:
            raise FormatError(f"{path}: {name} has shape {stored[name].shape}, expected {t.shape}")
        t.data[...] = stored[name]
    return net


def sync_target_attention(net: Network) -> None:
    """Overwrite every target attention parameter with its source counterpart."""
    src, tgt = PREFIX["source"], PREFIX["target"]
    for name in net.params.with_tags({"source"}):
        net.params[tgt + name[len(src):]].data[...] = net.params[name].data


def copy_network(net: Network) -> Network:
    other = build_network(net.cfg, seed=0)
    for name, t in net.params.items():
        other.params[name].data[...] = t.data
    return other
