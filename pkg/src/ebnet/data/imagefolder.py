from __future__ import annotations

from pathlib import Path

import torch
from loguru import logger
from torch.utils.data import Dataset
from torchvision.datasets import ImageFolder
from torchvision.transforms.functional import pil_to_tensor

from ..errors import FormatError


class ImageFolderSource(Dataset):
    """Class-per-directory images as uint8 (C, H, W) tensors of their native size."""

    def __init__(self, root: str | Path) -> None:
        root = Path(root)
        if not root.is_dir():
            raise FormatError("image folder split does not exist", path=root)
        try:
            self.folder = ImageFolder(str(root))
        except (FileNotFoundError, RuntimeError) as exc:
            raise FormatError(str(exc), path=root) from exc
        self.classes = list(self.folder.classes)
        self.labels = [label for _, label in self.folder.samples]

    def __len__(self) -> int:
        return len(self.folder)

    def __getitem__(self, index: int) -> tuple[torch.Tensor, int]:
        image, label = self.folder[index]
        return pil_to_tensor(image.convert("RGB")), label


def load_imagefolder(root: str | Path, split: str) -> ImageFolderSource:
    """``root/<split>/<class>/<image>``; "test" falls back to a "val" directory."""
    root = Path(root)
    split_dir = root / split
    if not split_dir.is_dir() and split == "test" and (root / "val").is_dir():
        split_dir = root / "val"
    source = ImageFolderSource(split_dir)
    logger.debug("Image folder {}: {} images in {} classes", split_dir, len(source), len(source.classes))
    return source
