"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit only."""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np


class PNMError(ValueError):
    pass


def quantize(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8 with round-half-up."""
    v = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5)
    return v.astype(np.uint8)


def write_pnm(path: Union[str, Path], img: np.ndarray) -> None:
    """Write ``img`` ([H, W], [1, H, W] or [3, H, W], values in [0, 1])."""
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim == 2:
        magic, pixels = b"P5", quantize(img)
    elif img.ndim == 3 and img.shape[0] == 3:
        magic, pixels = b"P6", quantize(img).transpose(1, 2, 0)
    else:
        raise PNMError(f"cannot write image of shape {img.shape} as PGM/PPM")
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out, pos = [], 0
    while len(out) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PNMError("truncated header")
        out.append(buf[start:pos])
    return out, pos


def read_pnm(path: Union[str, Path]) -> np.ndarray:
    """Return a float image in [0, 1] of shape [1, H, W] (P5) or [3, H, W] (P6)."""
    buf = Path(path).read_bytes()
    try:
        toks, pos = _tokens(buf, 4)
    except PNMError as exc:
        raise PNMError(f"{path}: {exc}") from None
    magic = toks[0]
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"{path}: unsupported magic {magic!r} (need P5 or P6)")
    try:
        w, h, maxval = (int(t) for t in toks[1:])
    except ValueError:
        raise PNMError(f"{path}: malformed header fields {toks[1:]}") from None
    if w <= 0 or h <= 0:
        raise PNMError(f"{path}: bad image size {w}x{h}")
    if maxval != 255:
        raise PNMError(f"{path}: maxval {maxval} not supported, only 8-bit (255) images")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise PNMError(f"{path}: missing whitespace after header")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    n = w * h * channels
    data = buf[pos:pos + n]
    if len(data) != n:
        raise PNMError(f"{path}: expected {n} pixel bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(h, w, channels).transpose(2, 0, 1)
    return arr.astype(np.float64) / 255.0
