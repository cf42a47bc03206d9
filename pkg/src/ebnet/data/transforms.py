from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
import torch
import torch.nn.functional as F
import torchvision.transforms.functional as TF
from loguru import logger

from ..errors import ConfigError
from ..io import atomic_write_text

AugmentPolicy = Literal["cifar", "imagefolder", "none"]
NORM_STATS_FILE = "ebnet_norm_stats.json"

IMAGENET_CROP = 224
IMAGENET_RESIZE = 256

_memory_stats: dict[str, tuple[list[float], list[float]]] = {}


def _channel_view(values: Sequence[float], like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(values, dtype=like.dtype, device=like.device).view(-1, 1, 1)


def normalize(image: torch.Tensor, mean: Sequence[float], std: Sequence[float]) -> torch.Tensor:
    """``(x - mean) / std`` per channel of a (C, H, W) or (N, C, H, W) tensor."""
    if any(s <= 0 for s in std):
        raise ConfigError(f"std must be positive in every channel, got {list(std)}")
    return (image - _channel_view(mean, image)) / _channel_view(std, image)


def denormalize(image: torch.Tensor, mean: Sequence[float], std: Sequence[float]) -> torch.Tensor:
    if any(s <= 0 for s in std):
        raise ConfigError(f"std must be positive in every channel, got {list(std)}")
    return image * _channel_view(std, image) + _channel_view(mean, image)


def hflip(image: torch.Tensor) -> torch.Tensor:
    return torch.flip(image, dims=(-1,))


def _random_resized_crop_box(
    h: int, w: int, rng: np.random.Generator, scale=(0.08, 1.0), ratio=(3 / 4, 4 / 3)
) -> tuple[int, int, int, int]:
    area = h * w
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(10):
        target = area * rng.uniform(*scale)
        aspect = math.exp(rng.uniform(*log_ratio))
        cw = int(round(math.sqrt(target * aspect)))
        ch = int(round(math.sqrt(target / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    side = min(h, w)
    return (h - side) // 2, (w - side) // 2, side, side


def augment_train(
    image: torch.Tensor, rng: np.random.Generator, policy: AugmentPolicy, *, flip_p: float = 0.5
) -> torch.Tensor:
    """Training augmentation of one (C, H, W) float image.

    ``cifar``: reflect-pad 4, random crop back to the input size, flip.
    ``imagefolder``: random-resized crop to 224 and flip.
    """
    if policy == "none":
        return image
    if policy == "cifar":
        _, h, w = image.shape
        padded = F.pad(image.unsqueeze(0), (4, 4, 4, 4), mode="reflect").squeeze(0)
        top, left = (int(v) for v in rng.integers(0, 9, size=2))
        out = padded[:, top : top + h, left : left + w]
    elif policy == "imagefolder":
        _, h, w = image.shape
        top, left, ch, cw = _random_resized_crop_box(h, w, rng)
        out = TF.resized_crop(image, top, left, ch, cw, [IMAGENET_CROP, IMAGENET_CROP], antialias=True)
    else:
        raise ConfigError(f"Unknown augmentation policy {policy!r}")
    if rng.random() < flip_p:
        out = hflip(out)
    return out


def eval_transform(kind: str) -> Callable[[torch.Tensor], torch.Tensor]:
    """Resize the short side to 256 and center-crop 224 for image folders; identity otherwise."""
    if kind == "imagefolder":

        def resize_crop(image: torch.Tensor) -> torch.Tensor:
            image = TF.resize(image, IMAGENET_RESIZE, antialias=True)
            return TF.center_crop(image, [IMAGENET_CROP, IMAGENET_CROP])

        return resize_crop
    return lambda image: image


def channel_stats(images: np.ndarray) -> tuple[list[float], list[float]]:
    """Per-channel mean and std of uint8 images (N, C, H, W) on the [0, 1] scale."""
    x = images.astype(np.float64) / 255.0
    mean = x.mean(axis=(0, 2, 3))
    std = x.std(axis=(0, 2, 3))
    return [float(v) for v in mean], [float(max(v, 1e-12)) for v in std]


def cached_norm_stats(
    root: str | Path, key: str, compute: Callable[[], tuple[list[float], list[float]]]
) -> tuple[list[float], list[float]]:
    """Stats stored under ``key`` in ``root/ebnet_norm_stats.json``, computed on first use.

    A read-only data directory falls back to a per-process cache.
    """
    path = Path(root) / NORM_STATS_FILE
    memo_key = f"{path}:{key}"
    if memo_key in _memory_stats:
        return _memory_stats[memo_key]
    doc: dict = {}
    if path.is_file():
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            logger.warning("Ignoring unreadable {}: {}", path, exc)
            doc = {}
        if key in doc:
            stats = (list(doc[key]["mean"]), list(doc[key]["std"]))
            _memory_stats[memo_key] = stats
            return stats

    mean, std = compute()
    doc[key] = {"mean": mean, "std": std}
    try:
        atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        logger.warning("Could not cache normalization stats at {}: {}", path, exc)
    _memory_stats[memo_key] = (mean, std)
    return mean, std
