"""Binary checkpoint container.

Layout, all integers little-endian::

    magic        4 bytes   b"EBN1" (training) or b"EBX1" (packed export)
    version      u32
    header_len   u32
    header       canonical JSON (sorted keys): arch, seed, counters, meta
    n_records    u32
    records      name_len u16, name utf-8, dtype u8, ndim u8, dims u32[ndim], payload

Real payloads are raw little-endian floats. Packed payloads are one
bit-plane record holding the whole tensor as a single row.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping, Union

import attrs
import numpy as np
import torch
import torch.nn as nn

from .arch import ArchSpec
from .bitcore import BitPlaneTensor, binarize_pack, deserialize_bitplane, serialize_bitplane, unpack
from .errors import CheckpointVersionError, FormatError
from .io import atomic_write_bytes

TRAIN_MAGIC = b"EBN1"
EXPORT_MAGIC = b"EBX1"
FORMAT_VERSION = 1

DTYPE_REAL64 = 0
DTYPE_REAL32 = 1
DTYPE_PACKED = 2

_REAL_DTYPES = {DTYPE_REAL64: np.dtype("<f8"), DTYPE_REAL32: np.dtype("<f4")}
_SKIPPED_BUFFERS = ("num_batches_tracked",)


@attrs.frozen
class PackedRecord:
    """Sign bits of a tensor of logical ``shape``, stored as one row."""

    shape: tuple[int, ...]
    bits: BitPlaneTensor

    @classmethod
    def from_array(cls, values: np.ndarray) -> "PackedRecord":
        flat = np.asarray(values, dtype=np.float64).reshape(1, -1, 1, 1)
        return cls(tuple(int(d) for d in values.shape), binarize_pack(flat, "chw"))

    def to_dense(self, dtype=np.float32) -> np.ndarray:
        return unpack(self.bits, dtype).reshape(self.shape)

    @property
    def payload_nbytes(self) -> int:
        return self.bits.nbytes


Record = Union[np.ndarray, PackedRecord]


@attrs.frozen(eq=False)
class Checkpoint:
    arch: ArchSpec
    records: dict[str, Record] = attrs.field(factory=dict)
    seed: int = 0
    counters: dict[str, int] = attrs.field(factory=dict)
    meta: dict[str, Any] = attrs.field(factory=dict)
    magic: bytes = TRAIN_MAGIC

    def header(self) -> dict[str, Any]:
        return {
            "arch": self.arch.model_dump(mode="json"),
            "seed": self.seed,
            "counters": dict(self.counters),
            "meta": dict(self.meta),
        }


def _canonical_json(doc: Mapping[str, Any]) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("ascii")


def _encode_record(name: str, value: Record) -> bytes:
    raw_name = name.encode("utf-8")
    if isinstance(value, PackedRecord):
        code, dims, payload = DTYPE_PACKED, value.shape, serialize_bitplane(value.bits)
    else:
        arr = np.asarray(value)
        if arr.dtype == np.float64:
            code = DTYPE_REAL64
        elif arr.dtype == np.float32:
            code = DTYPE_REAL32
        else:
            raise FormatError(f"record {name!r} has unsupported dtype {arr.dtype}")
        dims = arr.shape
        payload = np.ascontiguousarray(arr, dtype=_REAL_DTYPES[code]).tobytes()
    head = struct.pack(f"<H{len(raw_name)}sBB{len(dims)}I", len(raw_name), raw_name, code, len(dims), *dims)
    return head + payload


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = _canonical_json(ckpt.header())
    parts = [ckpt.magic, struct.pack("<II", FORMAT_VERSION, len(header)), header]
    parts.append(struct.pack("<I", len(ckpt.records)))
    parts.extend(_encode_record(name, value) for name, value in ckpt.records.items())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, path: Path | None) -> None:
        self.view = memoryview(data)
        self.path = path
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        if self.pos + n > len(self.view):
            raise FormatError(f"truncated {what}", path=self.path, offset=self.pos)
        chunk = self.view[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(
    data: bytes, *, path: str | Path | None = None, magic: bytes | None = TRAIN_MAGIC
) -> Checkpoint:
    src = None if path is None else Path(path)
    r = _Reader(data, src)
    found = bytes(r.take(4, "magic"))
    if magic is not None and found != magic:
        raise CheckpointVersionError(f"bad magic {found!r}, expected {magic!r}", path=src, offset=0)
    if found not in (TRAIN_MAGIC, EXPORT_MAGIC):
        raise CheckpointVersionError(f"unknown magic {found!r}", path=src, offset=0)
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}", path=src, offset=4)
    (header_len,) = r.unpack("<I", "header length")
    header_at = r.pos
    try:
        header = json.loads(bytes(r.take(header_len, "header")).decode("ascii"))
        arch = ArchSpec.model_validate(header["arch"])
    except FormatError:
        raise
    except (ValueError, KeyError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}", path=src, offset=header_at) from exc

    (n_records,) = r.unpack("<I", "record count")
    records: dict[str, Record] = {}
    for _ in range(n_records):
        record_at = r.pos
        (name_len,) = r.unpack("<H", "record name length")
        name = bytes(r.take(name_len, "record name")).decode("utf-8")
        code, ndim = r.unpack("<BB", "record dtype")
        dims = r.unpack(f"<{ndim}I", "record shape")
        if code == DTYPE_PACKED:
            bits, end = deserialize_bitplane(r.view, offset=r.pos, path=src)
            r.pos = end
            if bits.shape.numel != int(np.prod(dims, dtype=np.int64)):
                raise FormatError(f"packed record {name!r} does not match shape {dims}", path=src, offset=record_at)
            records[name] = PackedRecord(tuple(dims), bits)
        elif code in _REAL_DTYPES:
            dtype = _REAL_DTYPES[code]
            count = int(np.prod(dims, dtype=np.int64))
            raw = r.take(count * dtype.itemsize, f"payload of {name!r}")
            records[name] = np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder("="), copy=True).reshape(dims)
        else:
            raise FormatError(f"unknown dtype code {code} in record {name!r}", path=src, offset=record_at)
    if r.pos != len(r.view):
        raise FormatError("trailing bytes after the last record", path=src, offset=r.pos)

    return Checkpoint(
        arch=arch,
        records=records,
        seed=int(header.get("seed", 0)),
        counters=dict(header.get("counters", {})),
        meta=dict(header.get("meta", {})),
        magic=found,
    )


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, encode_checkpoint(ckpt))


def load_checkpoint(
    path: str | Path, *, magic: bytes | None = TRAIN_MAGIC, arch: ArchSpec | None = None
) -> Checkpoint:
    path = Path(path)
    ckpt = decode_checkpoint(path.read_bytes(), path=path, magic=magic)
    if arch is not None and ckpt.arch != arch:
        raise CheckpointVersionError(
            f"checkpoint was written for {ckpt.arch.name} with {ckpt.arch.n_experts} experts, "
            f"expected {arch.name} with {arch.n_experts}",
            path=path,
        )
    return ckpt


def state_records(module: nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    out = {}
    for name, tensor in module.state_dict().items():
        if name.endswith(_SKIPPED_BUFFERS):
            continue
        out[prefix + name] = tensor.detach().to("cpu").numpy().copy()
    return out


def load_state_records(module: nn.Module, records: Mapping[str, Record], prefix: str = "") -> None:
    """Copy ``records`` into ``module``; every persisted tensor must be present."""
    own = module.state_dict()
    state = {}
    for name, current in own.items():
        if name.endswith(_SKIPPED_BUFFERS):
            continue
        key = prefix + name
        if key not in records:
            raise CheckpointVersionError(f"checkpoint has no tensor {key!r}")
        value = records[key]
        dense = value.to_dense() if isinstance(value, PackedRecord) else value
        if tuple(dense.shape) != tuple(current.shape):
            raise CheckpointVersionError(
                f"tensor {key!r} has shape {tuple(dense.shape)}, model expects {tuple(current.shape)}"
            )
        state[name] = torch.from_numpy(np.array(dense)).to(dtype=current.dtype)
    module.load_state_dict(state, strict=False)
