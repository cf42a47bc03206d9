from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from jaxtyping import Float, Int64
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import GeometryError, ShapeError
from ..settings import thread_budget
from ._types import BitPlaneTensor, ConvGeometry, ScaleVector
from .packing import pack_rows, popcount64, unpack_bits

# Upper bound on uint64 words materialized per XOR block.
_BLOCK_WORDS = 1 << 21


def _check_weight_shape(shape: tuple[int, ...], geom: ConvGeometry) -> None:
    if tuple(shape) != geom.weight_shape:
        raise GeometryError(f"weight shape {tuple(shape)} does not match {geom.weight_shape} for {geom}")


def _check_input_channels(c: int, geom: ConvGeometry) -> None:
    if c != geom.in_channels:
        raise GeometryError(f"input has {c} channels but geometry expects {geom.in_channels}")


def conv2d_reference(
    x: Float[np.ndarray, "n c h w"],
    w: Float[np.ndarray, "o cg kh kw"],
    geom: ConvGeometry,
    *,
    pad_value: float = 0.0,
) -> Float[np.ndarray, "n o ho wo"]:
    """Grouped cross-correlation in float64, used as the correctness oracle.

    Each output element accumulates its receptive field one term at a time in
    row-major (channel, kernel row, kernel column) order. Binary callers pass
    ``pad_value=-1.0``.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"conv2d_reference expects a 4-D input, got {x.shape}")
    _check_input_channels(x.shape[1], geom)
    _check_weight_shape(w.shape, geom)

    n, _, h, wd = x.shape
    ho, wo = geom.output_hw(h, wd)
    p, s = geom.padding, geom.stride
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="constant", constant_values=pad_value)

    out = np.zeros((n, geom.out_channels, ho, wo), dtype=np.float64)
    cg, og = geom.group_in, geom.group_out
    for g in range(geom.groups):
        acc = out[:, g * og:(g + 1) * og]
        for ci in range(cg):
            plane = xp[:, g * cg + ci]
            for i in range(geom.kernel_h):
                for j in range(geom.kernel_w):
                    window = plane[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]
                    acc += w[g * og:(g + 1) * og, ci, i, j][None, :, None, None] * window[:, None]
    return out


def _activation_bits(x: BitPlaneTensor) -> np.ndarray:
    """0/1 activation bits as (n, h, w, c)."""
    return np.ascontiguousarray(unpack_bits(x).transpose(0, 2, 3, 1))


def _receptive_fields(bits_nhwc: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """View of shape (n, ho, wo, c, kh, kw); padding uses bit 0, i.e. -1."""
    p, s = geom.padding, geom.stride
    padded = np.pad(bits_nhwc, ((0, 0), (p, p), (p, p), (0, 0)), mode="constant", constant_values=0)
    windows = sliding_window_view(padded, (geom.kernel_h, geom.kernel_w), axis=(1, 2))
    return windows[:, ::s, ::s]


def _mismatch_block(cols: np.ndarray, w_rows: np.ndarray) -> np.ndarray:
    return popcount64(cols[:, None, :] ^ w_rows[None, :, :]).sum(axis=-1)


def bconv_accumulate_packed(
    x: BitPlaneTensor,
    w: BitPlaneTensor,
    geom: ConvGeometry,
    *,
    threads: int | None = None,
) -> Int64[np.ndarray, "n o ho wo"]:
    """Integer accumulations of the binary convolution, before channel scaling.

    Each output is ``K - 2 * popcount(field XOR weight)`` with ``K`` the
    receptive-field length of one group.
    """
    _check_input_channels(x.shape.c, geom)
    _check_weight_shape(w.shape.as_tuple(), geom)
    if w.axis != "chw":
        raise GeometryError(f"weights must be packed along the reduction axis 'chw', got {w.axis!r}")

    n, _, h, wd = x.shape.as_tuple()
    ho, wo = geom.output_hw(h, wd)
    fields = _receptive_fields(_activation_bits(x), geom)
    positions = n * ho * wo
    k = geom.reduction_length
    cg, og = geom.group_in, geom.group_out
    words_per_row = w.words_per_row

    block_rows = max(1, _BLOCK_WORDS // max(1, og * words_per_row))
    n_threads = thread_budget() if threads is None else max(1, threads)

    out = np.empty((positions, geom.out_channels), dtype=np.int64)
    jobs = []
    for g in range(geom.groups):
        cols = pack_rows(fields[:, :, :, g * cg:(g + 1) * cg].reshape(positions, k))
        w_rows = w.words[g * og:(g + 1) * og]
        for start in range(0, positions, block_rows):
            jobs.append((g, start, min(start + block_rows, positions), cols, w_rows))

    def run(job) -> None:
        g, start, stop, cols, w_rows = job
        mismatches = _mismatch_block(cols[start:stop], w_rows)
        out[start:stop, g * og:(g + 1) * og] = k - 2 * mismatches

    logger.trace("bconv {}: {} blocks on {} thread(s)", geom, len(jobs), n_threads)
    if n_threads == 1 or len(jobs) == 1:
        for job in jobs:
            run(job)
    else:
        # Jobs write disjoint output slices.
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(run, jobs))

    return out.reshape(n, ho, wo, geom.out_channels).transpose(0, 3, 1, 2)


def bconv2d_packed(
    x: BitPlaneTensor,
    w: BitPlaneTensor,
    geom: ConvGeometry,
    alpha: ScaleVector,
    *,
    threads: int | None = None,
) -> Float[np.ndarray, "n o ho wo"]:
    """Binary convolution ``(sign(x) * sign(w)) . alpha`` on packed operands."""
    if len(alpha) != geom.out_channels:
        raise GeometryError(f"alpha has {len(alpha)} entries, expected {geom.out_channels}")
    acc = bconv_accumulate_packed(x, w, geom, threads=threads)
    return acc * alpha.alpha[None, :, None, None]
