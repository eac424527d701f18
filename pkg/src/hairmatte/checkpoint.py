"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"HMNC"                       magic
    u32  version                  FORMAT_VERSION
    u32  len, bytes               ModelSpec canonical text (UTF-8 JSON)
    u32  len, bytes               metadata (UTF-8 JSON, sorted keys)
    u32  count                    model records, then
    u32  count                    optimizer records

    record := u16 name_len, name (UTF-8), u8 rank, u32 dims[rank], f32 payload

Model records hold parameters first, then batch-norm running statistics, in
the model's own order. Optimizer records are named ``<param>.eg2`` and
``<param>.edx2``.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Model, ModelSpec, build_model

MAGIC = b"HMNC"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    code = "checkpoint_error"


class BadMagicError(CheckpointError):
    code = "bad_magic"


class VersionError(CheckpointError):
    code = "version_mismatch"


class TruncatedError(CheckpointError):
    code = "truncated"


class ShapeMismatchError(CheckpointError):
    code = "shape_mismatch"


@dataclass
class Checkpoint:
    model: Model
    meta: dict = field(default_factory=dict)
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)


def _write_records(buf: io.BytesIO, arrays: dict[str, np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def encode_checkpoint(model: Model, meta: dict | None = None, optimizer: dict[str, np.ndarray] | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    for text in (model.spec.to_text(), json.dumps(meta or {}, sort_keys=True)):
        raw = text.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
    _write_records(buf, model.state_arrays())
    _write_records(buf, optimizer or {})
    return buf.getvalue()


def save_checkpoint(model: Model, path, meta: dict | None = None, optimizer: dict[str, np.ndarray] | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(model, meta, optimizer))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def records(self, section: str) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I", f"{section} record count")
        out = {}
        for _ in range(count):
            (nlen,) = self.unpack("<H", "record name length")
            name = self.take(nlen, "record name").decode("utf-8")
            (rank,) = self.unpack("<B", f"rank of {name}")
            dims = self.unpack(f"<{rank}I", f"dims of {name}")
            size = int(np.prod(dims)) if rank else 1
            payload = self.take(4 * size, f"payload of {name}")
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
        return out


def decode_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError("not a checkpoint: bad magic")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    (n,) = r.unpack("<I", "spec length")
    spec = ModelSpec.from_text(r.take(n, "spec").decode("utf-8"))
    (n,) = r.unpack("<I", "metadata length")
    meta = json.loads(r.take(n, "metadata").decode("utf-8"))
    arrays = r.records("model")
    optimizer = r.records("optimizer")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint")

    model = build_model(spec)
    expected = model.state_arrays()
    if list(arrays) != list(expected):
        missing = [k for k in expected if k not in arrays]
        extra = [k for k in arrays if k not in expected]
        raise ShapeMismatchError(f"parameter set differs from spec: missing={missing[:3]} extra={extra[:3]}")
    for name, arr in arrays.items():
        if arr.shape != expected[name].shape:
            raise ShapeMismatchError(f"{name}: checkpoint shape {arr.shape} != spec shape {expected[name].shape}")
    model.load_state(arrays)
    return Checkpoint(model, meta, optimizer)


def read_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def load_checkpoint(path) -> Model:
    return read_checkpoint(path).model
