from __future__ import annotations

import attrs
import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ConfigError


@attrs.frozen(eq=False)
class MixedBatch:
    inputs: torch.Tensor
    labels_a: torch.Tensor
    labels_b: torch.Tensor
    lam: float

    def loss(self, logits: torch.Tensor) -> torch.Tensor:
        """``lam * CE(y_a) + (1 - lam) * CE(y_b)``."""
        return self.lam * F.cross_entropy(logits, self.labels_a) + (1.0 - self.lam) * F.cross_entropy(
            logits, self.labels_b
        )


def sample_mixup_lambda(alpha: float, rng: np.random.Generator, size: int | None = None):
    if alpha <= 0:
        raise ConfigError(f"mixup alpha must be positive, got {alpha}")
    return rng.beta(alpha, alpha, size=size)


def mixup_apply(
    batch: torch.Tensor,
    labels: torch.Tensor,
    alpha: float,
    rng: np.random.Generator,
    *,
    lam: float | None = None,
    perm: np.ndarray | None = None,
) -> MixedBatch:
    """Blend every sample with a random partner, ``lam ~ Beta(alpha, alpha)``."""
    if lam is None:
        lam = float(sample_mixup_lambda(alpha, rng))
    elif alpha <= 0:
        raise ConfigError(f"mixup alpha must be positive, got {alpha}")
    if perm is None:
        perm = rng.permutation(batch.shape[0])
    perm = torch.as_tensor(perm, dtype=torch.long, device=batch.device)
    mixed = lam * batch + (1.0 - lam) * batch[perm]
    return MixedBatch(inputs=mixed, labels_a=labels, labels_b=labels[perm], lam=lam)
