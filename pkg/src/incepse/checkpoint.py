"""Versioned little-endian binary checkpoints for :class:`ModelParams`.

Layout::

    magic      8 bytes  b"INCEPSE\\x00"
    version    u32
    config     fixed field sequence (u32 integers, f64 reals; kernel list
               prefixed by its length)
    count      u32 number of tensor records
    records    name_len u32, name utf-8, dtype u8 (4 = f32, 8 = f64),
               rank u32, dims u32 * rank, raw little-endian values

Values are stored in the array's own precision so a round trip is bit-exact.
"""

from __future__ import annotations

import math
import os
import struct
from pathlib import Path

import numpy as np

from .model import IncepSEConfig, ModelParams, parameter_shapes

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

MAGIC = b"INCEPSE\x00"
FORMAT_VERSION = 1
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}

_INT_FIELDS = ("input_channels", "depth", "branch_channels", "bottleneck_channels",
               "pool_branch_kernel", "skip_kernel", "se_reduction", "last_layer_multiplier",
               "last_layer_stride", "double_final_bottleneck", "num_classes")


class CheckpointError(ValueError):
    pass


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("unexpected end of checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _encode_config(cfg: IncepSEConfig) -> bytes:
    parts = [struct.pack("<I", int(getattr(cfg, name))) for name in _INT_FIELDS]
    parts.append(struct.pack("<I", len(cfg.kernel_sizes)))
    parts.append(struct.pack(f"<{len(cfg.kernel_sizes)}I", *cfg.kernel_sizes))
    parts.append(struct.pack("<d", cfg.dropout_p))
    return b"".join(parts)


def _decode_config(r: _Reader) -> IncepSEConfig:
    ints = dict(zip(_INT_FIELDS, r.unpack(f"{len(_INT_FIELDS)}I")))
    ints["double_final_bottleneck"] = bool(ints["double_final_bottleneck"])
    (nk,) = r.unpack("I")
    kernels = r.unpack(f"{nk}I")
    (dropout_p,) = r.unpack("d")
    try:
        return IncepSEConfig(kernel_sizes=kernels, dropout_p=dropout_p, **ints)
    except ValueError as exc:
        raise CheckpointError(f"invalid config block: {exc}") from None


def _record(name: str, arr: np.ndarray) -> bytes:
    code = arr.dtype.itemsize
    if code not in _DTYPES or arr.dtype.kind != "f":
        raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
    raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    encoded = name.encode("utf-8")
    head = struct.pack("<I", len(encoded)) + encoded + struct.pack("<BI", code, arr.ndim)
    return head + struct.pack(f"<{arr.ndim}I", *arr.shape) + raw


def save_checkpoint(m: ModelParams, path) -> Path:
    path = Path(path)
    entries = list(m.params.items()) + list(m.buffers.items())
    blob = b"".join([MAGIC, struct.pack("<I", FORMAT_VERSION), _encode_config(m.config),
                     struct.pack("<I", len(entries))] + [_record(n, a) for n, a in entries])
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    return path


def load_checkpoint(path, num_classes: int | None = None, input_channels: int | None = None) -> ModelParams:
    """Read a checkpoint, optionally requiring the given class and lead counts."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not an IncepSE checkpoint (bad magic)")
    (version,) = r.unpack("I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} unsupported (expected {FORMAT_VERSION})")
    cfg = _decode_config(r)
    want_classes = cfg.num_classes if num_classes is None else num_classes
    want_inputs = cfg.input_channels if input_channels is None else input_channels
    if (want_classes, want_inputs) != (cfg.num_classes, cfg.input_channels):
        raise CheckpointError(
            f"checkpoint expects input [B, {cfg.input_channels}, L] and head [{cfg.num_classes}, "
            f"{cfg.final_channels}], requested input [B, {want_inputs}, L] and head "
            f"[{want_classes}, {cfg.final_channels}]")
    pshapes, bshapes = parameter_shapes(cfg)
    (count,) = r.unpack("I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("I")
        name = r.take(nlen).decode("utf-8")
        code, rank = r.unpack("BI")
        if code not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        dims = r.unpack(f"{rank}I")
        raw = r.take(math.prod(dims) * code)
        tensors[name] = np.frombuffer(raw, dtype=_DTYPES[code]).reshape(dims).astype(_DTYPES[code].newbyteorder("="))
    if r.pos != len(r.data):
        raise CheckpointError(f"{len(r.data) - r.pos} trailing bytes after last tensor record")
    params, buffers = {}, {}
    for table, out in ((pshapes, params), (bshapes, buffers)):
        for name, shape in table.items():
            if name not in tensors:
                raise CheckpointError(f"missing tensor {name}")
            if tensors[name].shape != tuple(shape):
                raise CheckpointError(f"shape corruption in {name}: stored {tensors[name].shape}, config implies {shape}")
            out[name] = tensors.pop(name)
    if tensors:
        raise CheckpointError(f"unexpected tensors in checkpoint: {sorted(tensors)}")
    return ModelParams(cfg, params, buffers)
