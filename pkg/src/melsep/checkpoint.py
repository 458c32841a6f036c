"""Self-describing checkpoint container.

Layout::

    b"MELSEPCK"               8-byte magic
    u32 little-endian         format version
    u64 little-endian         header length in bytes
    header                    UTF-8 JSON: {"config": ..., "meta": ..., "tensors": [...]}
    tensor data               raw little-endian arrays, back to back

Each tensor entry records ``name``, ``dtype``, ``shape``, ``offset`` and
``nbytes`` relative to the start of the tensor data.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import MelRoformer, ModelConfig

MAGIC = b"MELSEPCK"
VERSION = 1
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: MelRoformer, meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        if tensor.dtype not in _DTYPES:
            raise CheckpointError(f"{name}: unsupported dtype {tensor.dtype}")
        raw = tensor.detach().cpu().numpy().astype(_DTYPES[tensor.dtype]).tobytes()
        entries.append({"name": name, "dtype": _DTYPES[tensor.dtype], "shape": list(tensor.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"config": model.config.to_dict(), "meta": meta or {}, "tensors": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", VERSION, len(header)) + header)
        for raw in blobs:
            fh.write(raw)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(20)
        if head[:8] != MAGIC:
            raise CheckpointError(f"{path}: not a melsep checkpoint")
        version, size = struct.unpack("<IQ", head[8:20])
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        return json.loads(fh.read(size))


def load_checkpoint(path) -> tuple[MelRoformer, dict]:
    data = Path(path).read_bytes()
    header = read_header(path)
    base = 20 + struct.unpack("<Q", data[12:20])[0]
    model = MelRoformer(ModelConfig.from_dict(header["config"]))
    state = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        chunk = data[start:start + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        state[e["name"]] = torch.from_numpy(np.frombuffer(chunk, dtype=e["dtype"]).reshape(e["shape"]).copy())
    model.load_state_dict(state)
    return model, header["meta"]
