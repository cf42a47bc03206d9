"""Adam with the binary-network contracts: finite gradients and clamped latent weights."""

from __future__ import annotations

from typing import Iterable

import torch
import torch.nn as nn
from loguru import logger

from ..errors import ConfigError, NonFiniteGradientError
from ..graph import BinaryConv2d, EBConv2d
from .config import TrainConfig

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class BinaryAdam(torch.optim.Adam):
    """Classic Adam (L2 added to the gradient) over named parameters.

    Before a step every gradient is checked for NaN or Inf and the step is
    aborted with :class:`NonFiniteGradientError`. After a step the latent
    weights of every parameter group flagged ``latent=True`` are clamped to
    ``[-1, 1]``.
    """

    def __init__(
        self,
        params: Iterable[tuple[str, nn.Parameter]] | Iterable[dict],
        lr: float = 1e-3,
        weight_decay: float = 0.0,
    ) -> None:
        groups = list(params)
        if groups and not isinstance(groups[0], dict):
            groups = [{"params": groups}]
        self._names: dict[int, str] = {}
        torch_groups = []
        for group in groups:
            group = dict(group)
            pairs = list(group.pop("params"))
            for name, p in pairs:
                self._names[id(p)] = name
            group.setdefault("latent", False)
            torch_groups.append({"params": [p for _, p in pairs], **group})
        super().__init__(torch_groups, lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS, weight_decay=weight_decay)

    def param_name(self, p: torch.Tensor) -> str:
        return self._names.get(id(p), "<unnamed>")

    def check_finite(self) -> None:
        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is None:
                    continue
                bad = int((~torch.isfinite(p.grad)).sum())
                if bad:
                    raise NonFiniteGradientError(self.param_name(p), bad)

    @torch.no_grad()
    def step(self, closure=None):
        self.check_finite()
        loss = super().step(closure)
        for group in self.param_groups:
            if group["latent"]:
                for p in group["params"]:
                    p.clamp_(-1.0, 1.0)
        return loss

    def set_lr(self, lr: float) -> None:
        for group in self.param_groups:
            group["lr"] = lr

    @property
    def weight_decay(self) -> float:
        return float(self.param_groups[0]["weight_decay"])


def latent_parameters(model: nn.Module) -> set[int]:
    """Ids of the latent binary weights (``theta``) of every binary convolution."""
    ids = set()
    for module in model.modules():
        if isinstance(module, EBConv2d):
            ids.add(id(module.bank.theta))
        elif isinstance(module, BinaryConv2d):
            ids.add(id(module.theta))
    return ids


def build_optimizer(model: nn.Module, cfg: TrainConfig) -> BinaryAdam:
    if cfg.stage == "II" and cfg.weight_decay != 0.0:
        raise ConfigError("stage II optimizers run without weight decay")
    latent = latent_parameters(model)
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    groups = [
        {"params": [(n, p) for n, p in named if id(p) in latent], "latent": True},
        {"params": [(n, p) for n, p in named if id(p) not in latent], "latent": False},
    ]
    logger.debug(
        "Adam over {} tensors ({} latent binary), stage {}, weight decay {}",
        len(named),
        len(groups[0]["params"]),
        cfg.stage,
        cfg.weight_decay,
    )
    groups = [g for g in groups if g["params"]]
    return BinaryAdam(groups, lr=cfg.base_lr, weight_decay=cfg.weight_decay)


def adam_step(
    params: list[torch.Tensor],
    grads: list[torch.Tensor],
    state: dict,
    lr: float,
    weight_decay: float = 0.0,
    *,
    clamp: bool = False,
) -> None:
    """One functional Adam update of ``params`` in place.

    ``state`` holds ``step`` and the first/second moments per parameter and
    is created on first use. ``clamp`` restricts the updated values to
    ``[-1, 1]`` as for latent binary weights.
    """
    if len(params) != len(grads):
        raise ConfigError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state:
        state.update(step=0, exp_avg=[torch.zeros_like(p) for p in params], exp_avg_sq=[torch.zeros_like(p) for p in params])
    if len(state["exp_avg"]) != len(params) or any(
        m.shape != p.shape for m, p in zip(state["exp_avg"], params)
    ):
        raise ConfigError("optimizer state does not match the parameters")
    for i, g in enumerate(grads):
        bad = int((~torch.isfinite(g)).sum())
        if bad:
            raise NonFiniteGradientError(f"param[{i}]", bad)

    beta1, beta2 = ADAM_BETAS
    state["step"] += 1
    t = state["step"]
    bias1 = 1.0 - beta1**t
    bias2 = 1.0 - beta2**t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state["exp_avg"], state["exp_avg_sq"]):
            if weight_decay:
                g = g + weight_decay * p
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            denom = (v / bias2).sqrt_().add_(ADAM_EPS)
            p.addcdiv_(m, denom, value=-lr / bias1)
            if clamp:
                p.clamp_(-1.0, 1.0)
