from __future__ import annotations

import attrs
import torch
import torch.nn.functional as F

from ..errors import ConfigError, ShapeError


@attrs.frozen(eq=False)
class GateState:
    """Per-sample gating decision; leading dims of all fields are the batch dims of ``z``."""

    z: torch.Tensor
    selected: torch.Tensor
    onehot: torch.Tensor

    @property
    def n_experts(self) -> int:
        return int(self.z.shape[-1])


def aggregate_psi(x: torch.Tensor, omega: torch.Tensor) -> torch.Tensor:
    """Expert logits from per-channel spatial means projected by ``omega`` (C, N).

    Accepts (C, H, W) or batched (B, C, H, W) input. No bias, no nonlinearity.
    """
    if x.dim() not in (3, 4):
        raise ShapeError(f"aggregate_psi expects (C,H,W) or (B,C,H,W), got {tuple(x.shape)}")
    if omega.dim() != 2 or x.shape[-3] != omega.shape[0]:
        raise ShapeError(
            f"input has {x.shape[-3]} channels but omega has shape {tuple(omega.shape)}"
        )
    return x.mean(dim=(-2, -1)) @ omega


def gate_forward(z: torch.Tensor) -> GateState:
    """Winner-take-all over the last dim; the lowest index wins ties."""
    if z.dim() == 0 or z.shape[-1] == 0:
        raise ShapeError("gate_forward needs at least one expert logit")
    z = z.detach()
    selected = torch.argmax(z, dim=-1)
    onehot = F.one_hot(selected, num_classes=z.shape[-1]).to(z.dtype)
    return GateState(z=z, selected=selected, onehot=onehot)


def gate_backward(z: torch.Tensor, upstream: torch.Tensor, tau: float) -> torch.Tensor:
    """Vector-Jacobian product of ``softmax(z / tau)`` with ``upstream``.

    ``J[i, j] = s_i (delta_ij - s_j) / tau``, so constants in ``upstream`` are annihilated.
    """
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    s = torch.softmax(z / tau, dim=-1)
    centered = upstream - (s * upstream).sum(dim=-1, keepdim=True)
    return s * centered / tau
