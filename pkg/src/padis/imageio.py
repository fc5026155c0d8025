"""Binary netpbm I/O (P5 grayscale, P6 RGB), 8- or 16-bit, values mapped to [0, 1]."""
from __future__ import annotations

import os
import re

import numpy as np

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def _parse_header(buf: bytes) -> tuple[bytes, int, int, int, int]:
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise ValueError("truncated netpbm header")
        fields.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    return fields[0], int(fields[1]), int(fields[2]), int(fields[3]), pos + 1


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read a P5/P6 file as a float64 ``(C, H, W)`` array in [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, width, height, maxval, offset = _parse_header(buf)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported netpbm type {magic!r}")
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: invalid maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    raw = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    data = raw.reshape(height, width, channels).transpose(2, 0, 1).astype(np.float64) / maxval
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite pixel values")
    return data


def write_image(path: str | os.PathLike, image: np.ndarray, bits: int = 8) -> None:
    """Write a ``(C, H, W)`` or ``(H, W)`` image with values clipped to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    channels, height, width = image.shape
    if channels not in (1, 3):
        raise ValueError(f"netpbm supports 1 or 3 channels, got {channels}")
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    dtype = np.dtype("u1") if bits == 8 else np.dtype(">u2")
    q = np.rint(np.clip(image, 0.0, 1.0) * maxval).astype(dtype)
    magic = "P5" if channels == 1 else "P6"
    header = f"{magic}\n{width} {height}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(q.transpose(1, 2, 0).tobytes())
