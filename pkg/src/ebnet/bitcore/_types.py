from __future__ import annotations

from typing import Literal

import attrs
import numpy as np
from jaxtyping import Float, UInt64

from ..errors import GeometryError, ShapeError

PackedAxis = Literal["chw", "c", "w"]
PACKED_AXES: tuple[PackedAxis, ...] = ("chw", "c", "w")
WORD_BITS = 64


def words_for(n_bits: int) -> int:
    return (n_bits + WORD_BITS - 1) // WORD_BITS


def _non_negative(instance, attribute, value) -> None:
    if value < 0:
        raise ShapeError(f"{attribute.name} must be >= 0, got {value}")


@attrs.frozen
class Shape4:
    n: int = attrs.field(converter=int, validator=_non_negative)
    c: int = attrs.field(converter=int, validator=_non_negative)
    h: int = attrs.field(converter=int, validator=_non_negative)
    w: int = attrs.field(converter=int, validator=_non_negative)

    @classmethod
    def of(cls, shape) -> "Shape4":
        dims = tuple(shape)
        if len(dims) != 4:
            raise ShapeError(f"Expected a 4-D shape, got {dims}")
        return cls(*dims)

    @property
    def numel(self) -> int:
        return self.n * self.c * self.h * self.w

    @property
    def is_live(self) -> bool:
        return min(self.n, self.c, self.h, self.w) >= 1

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.n, self.c, self.h, self.w)

    def row_layout(self, axis: PackedAxis) -> tuple[int, int]:
        """(rows, row_length) of the packed layout along ``axis``."""
        if axis == "chw":
            return self.n, self.c * self.h * self.w
        if axis == "c":
            return self.n * self.h * self.w, self.c
        if axis == "w":
            return self.n * self.c * self.h, self.w
        raise ValueError(f"Unknown packed axis {axis!r}; expected one of {PACKED_AXES}")


@attrs.frozen
class ConvGeometry:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __attrs_post_init__(self) -> None:
        if self.groups < 1:
            raise GeometryError(f"groups must be >= 1, got {self.groups}")
        if min(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w, self.stride) < 1:
            raise GeometryError(f"channels, kernel and stride must be positive: {self}")
        if self.padding < 0:
            raise GeometryError(f"padding must be >= 0, got {self.padding}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise GeometryError(
                f"in_channels={self.in_channels} and out_channels={self.out_channels} "
                f"must both be divisible by groups={self.groups}"
            )

    @classmethod
    def square(cls, in_channels: int, out_channels: int, kernel: int, **kwargs) -> "ConvGeometry":
        return cls(in_channels, out_channels, kernel, kernel, **kwargs)

    @property
    def group_in(self) -> int:
        return self.in_channels // self.groups

    @property
    def group_out(self) -> int:
        return self.out_channels // self.groups

    @property
    def reduction_length(self) -> int:
        return self.group_in * self.kernel_h * self.kernel_w

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.group_in, self.kernel_h, self.kernel_w)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        ho = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if ho < 1 or wo < 1:
            raise GeometryError(f"Input {h}x{w} is smaller than the padded kernel of {self}")
        return ho, wo


def _as_alpha(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


@attrs.frozen(eq=False)
class ScaleVector:
    alpha: Float[np.ndarray, "o"] = attrs.field(converter=_as_alpha)

    def __attrs_post_init__(self) -> None:
        if self.alpha.size == 0:
            raise ShapeError("ScaleVector must not be empty")
        if not np.all(np.isfinite(self.alpha)):
            raise ValueError("ScaleVector values must be finite")

    def __len__(self) -> int:
        return int(self.alpha.size)

    def scaled(self, s: float) -> "ScaleVector":
        return ScaleVector(self.alpha * s)


@attrs.frozen(eq=False)
class BitPlaneTensor:
    """Sign tensor packed one bit per element, LSB-first in 64-bit words.

    Bit 1 stands for +1 and bit 0 for -1. ``words`` has one row per packed
    row of ``axis``; bits beyond ``row_length`` in the last word are zero.
    """

    shape: Shape4
    axis: PackedAxis
    words: UInt64[np.ndarray, "rows words_per_row"]

    def __attrs_post_init__(self) -> None:
        rows, row_length = self.shape.row_layout(self.axis)
        expected = (rows, words_for(row_length))
        if self.words.dtype != np.uint64 or self.words.shape != expected:
            raise ShapeError(
                f"words must be uint64 with shape {expected} for {self.shape} along {self.axis!r}, "
                f"got {self.words.dtype} {self.words.shape}"
            )
        tail = row_length % WORD_BITS
        if tail and rows:
            spill = self.words[:, -1] >> np.uint64(tail)
            if np.any(spill):
                raise ValueError("padding bits beyond row_length must be zero")

    @property
    def row_length(self) -> int:
        return self.shape.row_layout(self.axis)[1]

    @property
    def words_per_row(self) -> int:
        return int(self.words.shape[1])

    @property
    def nbytes(self) -> int:
        return int(self.words.nbytes)

    def same_bits(self, other: "BitPlaneTensor") -> bool:
        return (
            self.shape == other.shape
            and self.axis == other.axis
            and np.array_equal(self.words, other.words)
        )
