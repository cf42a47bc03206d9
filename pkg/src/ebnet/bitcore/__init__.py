from ._types import PACKED_AXES, WORD_BITS, BitPlaneTensor, ConvGeometry, PackedAxis, ScaleVector, Shape4
from .kernels import bconv2d_packed, bconv_accumulate_packed, conv2d_reference
from .packing import (
    binarize_pack,
    deserialize_bitplane,
    pack_rows,
    popcount64,
    record_nbytes,
    repack,
    serialize_bitplane,
    sign_plus,
    unpack,
    unpack_bits,
    unpack_rows,
    xnor_popcount_dot,
)

__all__ = [
    "PACKED_AXES",
    "WORD_BITS",
    "BitPlaneTensor",
    "ConvGeometry",
    "PackedAxis",
    "ScaleVector",
    "Shape4",
    "bconv2d_packed",
    "bconv_accumulate_packed",
    "conv2d_reference",
    "binarize_pack",
    "deserialize_bitplane",
    "pack_rows",
    "popcount64",
    "record_nbytes",
    "repack",
    "serialize_bitplane",
    "sign_plus",
    "unpack",
    "unpack_bits",
    "unpack_rows",
    "xnor_popcount_dot",
]
