from __future__ import annotations

from bisect import bisect_right

from ..errors import ConfigError
from .config import TrainConfig


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate of ``epoch``.

    The first ``warmup_epochs`` ramp linearly from ``base_lr / warmup_epochs``
    to ``base_lr``; afterwards ``base_lr`` is multiplied by ``decay`` once per
    milestone already reached (a milestone takes effect at its own epoch).
    """
    if not 0 <= epoch < cfg.epochs:
        raise ConfigError(f"epoch {epoch} outside the {cfg.epochs} epoch schedule")
    if epoch < cfg.warmup_epochs:
        return cfg.base_lr * (epoch + 1) / cfg.warmup_epochs
    return cfg.base_lr * cfg.decay ** bisect_right(cfg.milestones, epoch)


def lr_trace(cfg: TrainConfig) -> list[float]:
    return [lr_schedule(e, cfg) for e in range(cfg.epochs)]
