from __future__ import annotations

from pathlib import Path

import numpy as np
from loguru import logger

from ..errors import FormatError

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049

_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _read_idx(path: Path, magic: int, n_dims: int) -> np.ndarray:
    data = path.read_bytes()
    header_len = 4 * (1 + n_dims)
    if len(data) < header_len:
        raise FormatError("truncated idx header", path=path, offset=0)
    header = np.frombuffer(data[:header_len], dtype=">u4")
    if int(header[0]) != magic:
        raise FormatError(f"bad idx magic {int(header[0])}, expected {magic}", path=path, offset=0)
    dims = tuple(int(d) for d in header[1:])
    expected = header_len + int(np.prod(dims, dtype=np.int64))
    if len(data) != expected:
        offset = min(len(data), expected)
        raise FormatError(f"idx payload has {len(data) - header_len} bytes for dims {dims}", path=path, offset=offset)
    return np.frombuffer(data, dtype=np.uint8, offset=header_len).reshape(dims).copy()


def read_idx_images(path: str | Path) -> np.ndarray:
    """(n, 1, rows, cols) uint8."""
    images = _read_idx(Path(path), IMAGES_MAGIC, 3)
    return images[:, None, :, :]


def read_idx_labels(path: str | Path) -> np.ndarray:
    return _read_idx(Path(path), LABELS_MAGIC, 1).astype(np.int64)


def load_mnist(root: str | Path, split: str) -> tuple[np.ndarray, np.ndarray]:
    if split not in _FILES:
        raise ValueError(f"Unknown MNIST split {split!r}")
    root = Path(root)
    image_file, label_file = _FILES[split]
    images = read_idx_images(root / image_file)
    labels = read_idx_labels(root / label_file)
    if len(images) != len(labels):
        raise FormatError(
            f"{len(images)} images but {len(labels)} labels", path=root / label_file, offset=8
        )
    logger.debug("MNIST {} split: {} images", split, len(labels))
    return images, labels
