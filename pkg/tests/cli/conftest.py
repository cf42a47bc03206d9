from pathlib import Path

import numpy as np
import pytest

from ebnet.cli import main


def _write_idx(path: Path, magic: int, array: np.ndarray) -> None:
    header = np.array([magic, *array.shape], dtype=">u4").tobytes()
    path.write_bytes(header + array.astype(np.uint8).tobytes())


def write_mnist(root: Path, n_train: int = 24, n_test: int = 10) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    for prefix, n in (("train", n_train), ("t10k", n_test)):
        labels = np.arange(n) % 10
        images = rng.integers(0, 64, size=(n, 28, 28))
        images[np.arange(n), labels] = 255  # one bright row per class
        _write_idx(root / f"{prefix}-images-idx3-ubyte", 2051, images)
        _write_idx(root / f"{prefix}-labels-idx1-ubyte", 2049, labels)
    return root


@pytest.fixture(scope="module")
def mnist_dir(tmp_path_factory) -> Path:
    return write_mnist(tmp_path_factory.mktemp("mnist"))


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, mnist_dir) -> Path:
    out = tmp_path_factory.mktemp("run")
    code = main(
        ["train", "--arch", "1111-1-1:1:1:1", "--base-width", "8", "--experts", "2"]
        + ["--dataset", "mnist", "--data-dir", str(mnist_dir), "--epochs", "1", "--batch-size", "8"]
        + ["--max-batches", "2", "--seed", "0", "--out", str(out)]
    )
    assert code == 0
    return out
