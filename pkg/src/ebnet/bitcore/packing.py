"""Sign packing and word-level popcount primitives.

Layout: element ``j`` of a packed row lives in word ``j // 64`` at bit
``j % 64`` (LSB-first). Rows are padded with zero bits up to a whole word.
"""

from __future__ import annotations

import numpy as np
from jaxtyping import Float, UInt8, UInt64

from ..errors import BitRangeError, FormatError, ShapeError
from ._types import WORD_BITS, BitPlaneTensor, PackedAxis, Shape4, words_for

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)

_RECORD_HEADER = np.dtype("<u4")
_RECORD_WORD = np.dtype("<u8")


def sign_plus(x: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def pack_rows(bits: UInt8[np.ndarray, "rows n"]) -> UInt64[np.ndarray, "rows words"]:
    """Pack a 0/1 matrix row by row into uint64 words."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 2:
        raise ShapeError(f"pack_rows expects a 2-D bit matrix, got shape {bits.shape}")
    rows, n = bits.shape
    n_words = words_for(n)
    padded = np.zeros((rows, n_words * WORD_BITS), dtype=np.uint8)
    padded[:, :n] = bits
    as_bytes = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(as_bytes).view(_RECORD_WORD).astype(np.uint64, copy=False).reshape(rows, n_words)


def unpack_rows(words: UInt64[np.ndarray, "rows words"], n: int) -> UInt8[np.ndarray, "rows n"]:
    words = np.ascontiguousarray(words, dtype=np.uint64)
    if words.ndim != 2:
        raise ShapeError(f"unpack_rows expects 2-D words, got shape {words.shape}")
    if n > words.shape[1] * WORD_BITS:
        raise BitRangeError(f"{n} bits requested from rows holding {words.shape[1] * WORD_BITS}")
    as_bytes = words.astype(_RECORD_WORD, copy=False).view(np.uint8)
    return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :n]


def _to_rows(x: np.ndarray, axis: PackedAxis) -> np.ndarray:
    n, c, h, w = x.shape
    if axis == "chw":
        return x.reshape(n, c * h * w)
    if axis == "c":
        return x.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    if axis == "w":
        return x.reshape(n * c * h, w)
    raise ValueError(f"Unknown packed axis {axis!r}")


def _from_rows(rows: np.ndarray, shape: Shape4, axis: PackedAxis) -> np.ndarray:
    n, c, h, w = shape.as_tuple()
    if axis == "c":
        return rows.reshape(n, h, w, c).transpose(0, 3, 1, 2)
    return rows.reshape(n, c, h, w)


def binarize_pack(x: Float[np.ndarray, "n c h w"], packed_axis: PackedAxis = "chw") -> BitPlaneTensor:
    """Pack ``sign(x)`` with bit 1 for every element ``>= 0``."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"binarize_pack expects a 4-D tensor, got shape {x.shape}")
    shape = Shape4.of(x.shape)
    if not shape.is_live:
        raise ShapeError(f"Cannot pack an empty tensor of shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("binarize_pack requires finite input")
    bits = (_to_rows(x, packed_axis) >= 0).astype(np.uint8)
    return BitPlaneTensor(shape=shape, axis=packed_axis, words=pack_rows(bits))


def unpack_bits(b: BitPlaneTensor) -> UInt8[np.ndarray, "n c h w"]:
    """0/1 bits of ``b`` laid out as (n, c, h, w)."""
    return _from_rows(unpack_rows(b.words, b.row_length), b.shape, b.axis)


def unpack(b: BitPlaneTensor, dtype=np.float64) -> Float[np.ndarray, "n c h w"]:
    """Expand bits back into a dense tensor of +1.0 / -1.0."""
    bits = unpack_bits(b)
    return (bits.astype(dtype) * 2 - 1).astype(dtype, copy=False)


def repack(b: BitPlaneTensor, packed_axis: PackedAxis) -> BitPlaneTensor:
    if b.axis == packed_axis:
        return b
    rows = _to_rows(np.ascontiguousarray(unpack_bits(b)), packed_axis)
    return BitPlaneTensor(shape=b.shape, axis=packed_axis, words=pack_rows(rows))


def _popcount_swar(words: np.ndarray) -> np.ndarray:
    v = np.asarray(words, dtype=np.uint64)
    v = v - ((v >> np.uint64(1)) & _M1)
    v = (v & _M2) + ((v >> np.uint64(2)) & _M2)
    v = (v + (v >> np.uint64(4))) & _M4
    with np.errstate(over="ignore"):
        v = v * _H01
    return (v >> np.uint64(56)).astype(np.int64)


def popcount64(words: np.ndarray, *, portable: bool = False) -> np.ndarray:
    """Per-word population count.

    Uses ``numpy.bitwise_count`` when available; ``portable=True`` forces the
    SWAR fallback. Both give identical results.
    """
    words = np.asarray(words, dtype=np.uint64)
    if not portable and hasattr(np, "bitwise_count"):
        return np.bitwise_count(words).astype(np.int64)
    return _popcount_swar(words)


def valid_mask(n_valid: int, n_words: int) -> np.ndarray:
    mask = np.zeros(n_words, dtype=np.uint64)
    full, tail = divmod(n_valid, WORD_BITS)
    mask[:full] = np.uint64(0xFFFFFFFFFFFFFFFF)
    if tail:
        mask[full] = np.uint64((1 << tail) - 1)
    return mask


def xnor_popcount_dot(a: np.ndarray, b: np.ndarray, n_valid: int, *, portable: bool = False) -> int:
    """Dot product of two packed ±1 rows over their first ``n_valid`` elements."""
    a = np.asarray(a, dtype=np.uint64).reshape(-1)
    b = np.asarray(b, dtype=np.uint64).reshape(-1)
    capacity = WORD_BITS * min(a.size, b.size)
    if n_valid < 0 or n_valid > capacity:
        raise BitRangeError(f"n_valid={n_valid} exceeds the packed capacity of {capacity} bits")
    n_words = words_for(n_valid)
    diff = (a[:n_words] ^ b[:n_words]) & valid_mask(n_valid, n_words)
    mismatches = int(popcount64(diff, portable=portable).sum())
    return n_valid - 2 * mismatches


def serialize_bitplane(b: BitPlaneTensor) -> bytes:
    """Encode as 4 x u32 shape, u32 words_per_row, then little-endian u64 words."""
    if b.axis != "chw":
        b = repack(b, "chw")
    header = np.array([*b.shape.as_tuple(), b.words_per_row], dtype=_RECORD_HEADER)
    return header.tobytes() + b.words.astype(_RECORD_WORD, copy=False).tobytes()


def record_nbytes(shape: Shape4) -> int:
    rows, row_length = shape.row_layout("chw")
    return 5 * _RECORD_HEADER.itemsize + rows * words_for(row_length) * _RECORD_WORD.itemsize


def deserialize_bitplane(data: bytes | memoryview, *, offset: int = 0, path=None) -> tuple[BitPlaneTensor, int]:
    """Decode one record starting at ``offset``; returns the tensor and the offset past it."""
    view = memoryview(data)
    header_end = offset + 5 * _RECORD_HEADER.itemsize
    if header_end > len(view):
        raise FormatError("truncated packed-tensor header", path=path, offset=offset)
    n, c, h, w, wpr = (int(v) for v in np.frombuffer(view[offset:header_end], dtype=_RECORD_HEADER))
    shape = Shape4(n, c, h, w)
    rows, row_length = shape.row_layout("chw")
    if wpr != words_for(row_length):
        raise FormatError(
            f"words_per_row={wpr} does not match shape {shape.as_tuple()}", path=path, offset=offset
        )
    end = header_end + rows * wpr * _RECORD_WORD.itemsize
    if end > len(view):
        raise FormatError("truncated packed-tensor payload", path=path, offset=header_end)
    words = np.frombuffer(view[header_end:end], dtype=_RECORD_WORD).astype(np.uint64).reshape(rows, wpr)
    try:
        tensor = BitPlaneTensor(shape=shape, axis="chw", words=words)
    except ValueError as exc:
        raise FormatError(str(exc), path=path, offset=header_end) from exc
    return tensor, end
