"""Portable checkpoint files.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"SSLIDECK"
    8       2     format version (uint16, currently 1)
    10      16    model config digest, ASCII hex
    26      4     length n of the JSON header (uint32)
    30      n     UTF-8 JSON: {"model": ModelConfig fields, "meta": {...}}
    30+n    8     parameter count P (uint64)
    38+n    4*P   float32 parameters, in ``param_shapes`` order, each row-major
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import ModelConfig, Params, flatten, unflatten

MAGIC = b"SSLIDECK"
VERSION = 1


def save_checkpoint(path, params: Params, config: ModelConfig, meta: dict | None = None):
    flat = flatten(params).astype("<f4")
    header = json.dumps({"model": asdict(config), "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(config.digest().encode("ascii"))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.tobytes())


def load_checkpoint(path) -> tuple[Params, ModelConfig, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    (version,) = struct.unpack_from("<H", data, 8)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    digest = data[10:26].decode("ascii")
    (n,) = struct.unpack_from("<I", data, 26)
    header = json.loads(data[30 : 30 + n])
    model = header["model"]
    model["enc_channels"] = tuple(model["enc_channels"])
    config = ModelConfig(**model)
    if config.digest() != digest:
        raise ValueError("checkpoint config digest does not match its header")
    (count,) = struct.unpack_from("<Q", data, 30 + n)
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=38 + n)
    return unflatten(flat.astype(np.float32), config), config, header["meta"]
