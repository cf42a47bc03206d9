"""CIFAR-10 binary batches: records of one label byte and 3072 pixel bytes (R, G, B planes of 32x32)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from jaxtyping import Int64, UInt8
from loguru import logger

from ..errors import FormatError

RECORD_BYTES = 1 + 3 * 32 * 32
RECORDS_PER_FILE = 10000
N_CLASSES = 10
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)


def _batch_dir(root: Path) -> Path:
    nested = root / "cifar-10-batches-bin"
    return nested if nested.is_dir() else root


def read_cifar_batch(
    path: str | Path, *, records_per_file: int | None = RECORDS_PER_FILE
) -> tuple[UInt8[np.ndarray, "n 3 32 32"], Int64[np.ndarray, " n"]]:
    """Decode one batch file; ``records_per_file=None`` accepts any whole number of records."""
    path = Path(path)
    raw = np.fromfile(path, dtype=np.uint8)
    size = raw.size
    if size % RECORD_BYTES:
        whole = size // RECORD_BYTES
        raise FormatError(
            f"file ends inside record {whole}: {size % RECORD_BYTES} of {RECORD_BYTES} bytes present",
            path=path,
            offset=whole * RECORD_BYTES,
        )
    n = size // RECORD_BYTES
    if records_per_file is not None and n != records_per_file:
        raise FormatError(f"expected {records_per_file} records, found {n}", path=path, offset=size)

    records = raw.reshape(n, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= N_CLASSES)
    if bad.size:
        raise FormatError(
            f"label {labels[bad[0]]} out of range in record {bad[0]}", path=path, offset=int(bad[0]) * RECORD_BYTES
        )
    images = records[:, 1:].reshape(n, 3, 32, 32).copy()
    logger.trace("Read {} CIFAR records from {}", n, path)
    return images, labels


def load_cifar10(
    root: str | Path, split: str, *, records_per_file: int | None = RECORDS_PER_FILE
) -> tuple[UInt8[np.ndarray, "n 3 32 32"], Int64[np.ndarray, " n"]]:
    """All records of ``split`` ("train": 5 files, "test": 1 file) in file order."""
    if split not in ("train", "test"):
        raise ValueError(f"Unknown CIFAR-10 split {split!r}")
    base = _batch_dir(Path(root))
    names = TRAIN_FILES if split == "train" else TEST_FILES
    parts = [read_cifar_batch(base / name, records_per_file=records_per_file) for name in names]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    logger.debug("CIFAR-10 {} split: {} images from {}", split, len(labels), base)
    return images, labels
