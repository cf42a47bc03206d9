import numpy as np
import pytest

from ebnet.arch import ArchSpec
from ebnet.data import ArrayDataset, DataBundle
from ebnet.trainer import PolicyConfig, TrainConfig


def _split(n: int, rng: np.random.Generator) -> ArrayDataset:
    labels = np.arange(n) % 2
    images = rng.integers(0, 96, size=(n, 3, 8, 8), dtype=np.uint8)
    images[labels == 1] += 150
    return ArrayDataset(images, labels)


@pytest.fixture
def tiny_bundle() -> DataBundle:
    rng = np.random.default_rng(0)
    return DataBundle("cifar10", _split(64, rng), _split(32, rng), 2, 3, 8, [0.5, 0.5, 0.5], [0.25, 0.25, 0.25])


@pytest.fixture
def tiny_arch() -> ArchSpec:
    return ArchSpec(
        blocks=(1, 1, 1, 1),
        base_width=8,
        n_experts=2,
        stem="cifar3x3",
        input_resolution=8,
        classes=2,
        downsample_variant="vanilla",
    )


@pytest.fixture
def tiny_policy_config() -> PolicyConfig:
    common = dict(epochs=2, milestones=[1], warmup_epochs=1, batch_size=16, max_batches=2)
    return PolicyConfig(
        stage1=TrainConfig(stage="I", **common),
        stage2=TrainConfig(stage="II", weight_decay=0.0, **common),
        recalibration_batches=2,
    )
