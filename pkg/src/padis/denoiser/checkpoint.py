"""Binary checkpoint files.

Layout (little-endian)::

    b"PDSN"                       magic
    uint32 version
    uint32 header length n
    n bytes UTF-8 JSON header     network config, metadata, parameter shapes
    float32 raw parameters        in declaration order
    float32 EMA parameters        same order
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from .net import NetConfig
from .training import Checkpoint

MAGIC = b"PDSN"
VERSION = 1


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    header = {
        "net_config": ckpt.net_config.to_dict(),
        "meta": ckpt.meta,
        "shapes": [list(p.shape) for p in ckpt.params],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for group in (ckpt.params, ckpt.ema_params):
            for p in group:
                fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, n = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12 + n
    header = json.loads(buf[12:offset].decode("utf-8"))
    shapes = [tuple(s) for s in header["shapes"]]
    groups = []
    for _ in range(2):
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape)
            arrays.append(arr.astype(np.float32))
            offset += 4 * count
        groups.append(arrays)
    if offset != len(buf):
        raise ValueError(f"{path}: {len(buf) - offset} trailing bytes")
    return Checkpoint(net_config=NetConfig(**header["net_config"]), params=groups[0],
                      ema_params=groups[1], meta=header["meta"])
