"""Little-endian named-tensor records.

Record layout: u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
f64 values in row-major order.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class FormatError(ValueError):
    pass


def write_tensor(fh: BinaryIO, name: str, values: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.asarray(values, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(fh: BinaryIO) -> tuple[str, np.ndarray]:
    (n,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
    if n > 4096:
        raise FormatError(f"implausible tensor name length {n}")
    name = _read_exact(fh, n, "tensor name").decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4, f"rank of {name}"))
    if rank > 8:
        raise FormatError(f"implausible rank {rank} for {name}")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"dims of {name}"))
    count = int(np.prod(dims)) if rank else 1
    data = _read_exact(fh, 8 * count, f"values of {name}")
    return name, np.reshape(np.frombuffer(data, dtype="<f8").astype(np.float64), dims)
