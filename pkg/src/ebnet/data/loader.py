"""Datasets, deterministic ordering and the torch loaders used for training.

Shuffling and augmentation draw from Philox streams: the epoch order is keyed
by ``(seed, epoch)`` and every sample's augmentation by ``(seed, epoch, index)``,
so any epoch can be reproduced without replaying the earlier ones.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Iterator, Literal, Sequence

import attrs
import numpy as np
import torch
from loguru import logger
from torch.utils.data import DataLoader, Dataset, Sampler

from ..errors import ConfigError
from .cifar import load_cifar10
from .imagefolder import ImageFolderSource, load_imagefolder
from .mnist import load_mnist
from .transforms import AugmentPolicy, augment_train, cached_norm_stats, channel_stats, eval_transform, normalize

DatasetKind = Literal["cifar10", "mnist", "imagefolder"]
DATASET_KINDS: tuple[DatasetKind, ...] = ("cifar10", "mnist", "imagefolder")

_STATS_SAMPLE = 512


@attrs.frozen
class DatasetSource:
    kind: DatasetKind
    root: Path = attrs.field(converter=Path)

    def open(self, **kwargs) -> "DataBundle":
        return open_dataset(self.kind, self.root, **kwargs)


class ArrayDataset(Dataset):
    """In-memory uint8 images (N, C, H, W) with integer labels."""

    def __init__(self, images: np.ndarray, labels: np.ndarray) -> None:
        if len(images) != len(labels):
            raise ValueError(f"{len(images)} images but {len(labels)} labels")
        self.images = torch.from_numpy(np.ascontiguousarray(images))
        self.labels = torch.from_numpy(np.asarray(labels, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, index: int) -> tuple[torch.Tensor, int]:
        return self.images[index], int(self.labels[index])


def sample_generator(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=[epoch, index, 0, 0]))


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.Generator(np.random.Philox(key=seed, counter=epoch)).permutation(n)


class PreparedView(Dataset):
    """Float, normalized and (for training) augmented samples of a uint8 source."""

    def __init__(
        self,
        source: Dataset,
        *,
        mean: Sequence[float],
        std: Sequence[float],
        policy: AugmentPolicy = "none",
        prepare: Callable[[torch.Tensor], torch.Tensor] | None = None,
        seed: int = 0,
        epoch: int = 0,
    ) -> None:
        self.source = source
        self.mean = list(mean)
        self.std = list(std)
        self.policy = policy
        self.prepare = prepare
        self.seed = seed
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.source)

    def __getitem__(self, index: int) -> tuple[torch.Tensor, int]:
        raw, label = self.source[index]
        image = raw.to(torch.float32) / 255.0
        if self.policy != "none":
            image = augment_train(image, sample_generator(self.seed, self.epoch, index), self.policy)
        elif self.prepare is not None:
            image = self.prepare(image)
        return normalize(image, self.mean, self.std), label


class EpochSampler(Sampler[int]):
    def __init__(self, n: int, *, seed: int, epoch: int, shuffle: bool) -> None:
        self.n = n
        self.seed = seed
        self.epoch = epoch
        self.shuffle = shuffle

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[int]:
        if not self.shuffle:
            return iter(range(self.n))
        return iter(epoch_permutation(self.n, self.seed, self.epoch).tolist())


@attrs.frozen(eq=False)
class DataBundle:
    kind: DatasetKind
    train: Dataset
    test: Dataset
    classes: int
    in_channels: int
    resolution: int
    mean: list[float]
    std: list[float]

    @property
    def policy(self) -> AugmentPolicy:
        return {"cifar10": "cifar", "imagefolder": "imagefolder"}.get(self.kind, "none")

    @property
    def stem(self) -> str:
        return "imagenet7x7" if self.kind == "imagefolder" else "cifar3x3"


def _imagefolder_stats(source: ImageFolderSource) -> tuple[list[float], list[float]]:
    prepare = eval_transform("imagefolder")
    step = max(1, len(source) // _STATS_SAMPLE)
    picked = [prepare(source[i][0]).numpy() for i in range(0, len(source), step)][:_STATS_SAMPLE]
    return channel_stats(np.stack(picked))


def open_dataset(kind: DatasetKind, root: str | Path, *, cifar_records_per_file: int | None = 10000) -> DataBundle:
    root = Path(root)
    if kind == "cifar10":
        train_x, train_y = load_cifar10(root, "train", records_per_file=cifar_records_per_file)
        test_x, test_y = load_cifar10(root, "test", records_per_file=cifar_records_per_file)
        mean, std = cached_norm_stats(root, "cifar10", lambda: channel_stats(train_x))
        return DataBundle(kind, ArrayDataset(train_x, train_y), ArrayDataset(test_x, test_y), 10, 3, 32, mean, std)
    if kind == "mnist":
        train_x, train_y = load_mnist(root, "train")
        test_x, test_y = load_mnist(root, "test")
        mean, std = cached_norm_stats(root, "mnist", lambda: channel_stats(train_x))
        return DataBundle(kind, ArrayDataset(train_x, train_y), ArrayDataset(test_x, test_y), 10, 1, 28, mean, std)
    if kind == "imagefolder":
        train = load_imagefolder(root, "train")
        test = load_imagefolder(root, "test")
        if train.classes != test.classes:
            raise ConfigError(f"train and test splits of {root} list different classes")
        mean, std = cached_norm_stats(root, "imagefolder", lambda: _imagefolder_stats(train))
        return DataBundle(kind, train, test, len(train.classes), 3, 224, mean, std)
    raise ConfigError(f"Unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")


def make_loader(
    bundle: DataBundle,
    *,
    split: Literal["train", "test"],
    batch_size: int,
    seed: int,
    epoch: int = 0,
    workers: int = 0,
    prefetch: int = 2,
) -> DataLoader:
    """Batches of one epoch: shuffled and augmented for ``train``, in file order otherwise."""
    train = split == "train"
    source = bundle.train if train else bundle.test
    view = PreparedView(
        source,
        mean=bundle.mean,
        std=bundle.std,
        policy=bundle.policy if train else "none",
        prepare=None if train else eval_transform(bundle.kind),
        seed=seed,
        epoch=epoch,
    )
    sampler = EpochSampler(len(view), seed=seed, epoch=epoch, shuffle=train)
    logger.trace("{} loader: epoch {}, {} samples, batch {}", split, epoch, len(view), batch_size)
    return DataLoader(
        view,
        batch_size=batch_size,
        sampler=sampler,
        num_workers=workers,
        prefetch_factor=prefetch if workers > 0 else None,
        drop_last=False,
    )
