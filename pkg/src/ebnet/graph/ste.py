"""Straight-through estimators for activation and weight binarization."""

from __future__ import annotations

import torch

from ..bitcore import BitPlaneTensor, binarize_pack


def _sign_plus(x: torch.Tensor) -> torch.Tensor:
    return torch.where(x >= 0, torch.ones_like(x), -torch.ones_like(x))


class SignSTE(torch.autograd.Function):
    """sign(x) forward, hard-tanh gradient mask ``1{|x| <= 1}`` backward."""

    @staticmethod
    def forward(ctx, x: torch.Tensor) -> torch.Tensor:
        ctx.save_for_backward(x)
        return _sign_plus(x)

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor) -> torch.Tensor:
        (x,) = ctx.saved_tensors
        return grad_output * (x.abs() <= 1).to(grad_output.dtype)


class WeightSignSTE(torch.autograd.Function):
    """sign(theta) forward, identity backward; the latent clamp handles saturation."""

    @staticmethod
    def forward(ctx, theta: torch.Tensor) -> torch.Tensor:
        return _sign_plus(theta)

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor) -> torch.Tensor:
        return grad_output


def sign_ste(x: torch.Tensor) -> torch.Tensor:
    return SignSTE.apply(x)


def weight_binarize_ste(theta: torch.Tensor) -> torch.Tensor:
    """Dense +1/-1 weights that stay differentiable w.r.t. the latent ``theta``."""
    return WeightSignSTE.apply(theta)


def pack_weights(theta: torch.Tensor) -> BitPlaneTensor:
    """Bit planes of ``sign(theta)`` along the reduction axis, one row per output channel."""
    return binarize_pack(theta.detach().to("cpu", torch.float64).numpy(), "chw")
