"""Binary model weights file.

All integers and floats are little-endian::

    magic        4 bytes   b"DDCP"
    version      u16       currently 1
    blocks       u32
    width        u32
    kernel       u32
    n_dilations  u32
    dilations    u32 * n_dilations
    n_tensors    u32
    then per tensor:
      name_len   u16
      name       UTF-8, name_len bytes
      rank       u8
      dims       u32 * rank
      data       float32 * prod(dims), C order

Tensors are written in model order: trainable parameters, then the
batch-norm running statistics.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import CanConfig, CanModel, buffer_shapes, parameter_shapes

MAGIC = b"DDCP"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def model_to_bytes(model: CanModel) -> bytes:
    cfg = model.config
    out = [MAGIC, struct.pack("<H", VERSION),
           struct.pack("<4I", cfg.blocks, cfg.width, cfg.kernel, len(cfg.dilations)),
           struct.pack(f"<{len(cfg.dilations)}I", *cfg.dilations)]
    tensors = model.tensors()
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("truncated model file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def model_from_bytes(data: bytes) -> CanModel:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    blocks, width, kernel, n_dil = r.unpack("<4I")
    dilations = r.unpack(f"<{n_dil}I")
    try:
        cfg = CanConfig(blocks, width, kernel, tuple(dilations))
    except ValueError as exc:
        raise ModelFormatError(f"invalid config block: {exc}") from exc
    (n_tensors,) = r.unpack("<I")
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        count = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
        tensors[name] = arr.astype(np.float64)
    if r.pos != len(data):
        raise ModelFormatError("trailing bytes after the last tensor")
    pshapes, bshapes = parameter_shapes(cfg), buffer_shapes(cfg)
    expected = {**pshapes, **bshapes}
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise ModelFormatError(f"tensor set mismatch; missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise ModelFormatError(f"{name}: shape {tensors[name].shape}, expected {shape}")
    return CanModel(cfg, {k: tensors[k] for k in pshapes}, {k: tensors[k] for k in bshapes})


def save_model(model: CanModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> CanModel:
    return model_from_bytes(Path(path).read_bytes())
