"""Short stage I runs that score search candidates."""

from __future__ import annotations

import threading

import attrs
import torch
from loguru import logger

from ..arch import ArchSpec, build_network
from ..data import DataBundle
from .config import TrainConfig
from .loop import train_stage

_BUILD_LOCK = threading.Lock()


def adapt_to_dataset(spec: ArchSpec, data: DataBundle) -> ArchSpec:
    """``spec`` with the stem, resolution and label space of ``data``."""
    return spec.replace(
        stem=data.stem,
        input_resolution=data.resolution,
        classes=data.classes,
        in_channels=data.in_channels,
    )


@attrs.frozen
class ProxyTrainer:
    """Validation top-1 after ``epochs`` of stage I training, seeded identically for every candidate."""

    data: DataBundle
    epochs: int = 2
    batch_size: int = 128
    seed: int = 0
    max_batches: int | None = None

    def config(self) -> TrainConfig:
        return TrainConfig(
            stage="I",
            epochs=self.epochs,
            milestones=[],
            warmup_epochs=0,
            batch_size=self.batch_size,
            seed=self.seed,
            max_batches=self.max_batches,
        )

    def __call__(self, spec: ArchSpec) -> float:
        arch = adapt_to_dataset(spec, self.data)
        # torch's default generator is process-wide
        with _BUILD_LOCK:
            torch.manual_seed(self.seed)
            model = build_network(arch)
        metrics = train_stage(model, self.data, self.config(), step=f"proxy_{arch.name}")
        score = metrics.final.val_top1
        logger.debug("Proxy score of {} with {} experts: {:.2f}", arch.name, arch.n_experts, score)
        return score
