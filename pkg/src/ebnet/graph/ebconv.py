"""Binary and expert binary convolutions.

An :class:`EBConv2d` holds ``N`` expert filter banks. Every sample picks one
expert by winner-take-all over ``psi(x) = mean_hw(x) @ omega`` and is
convolved with that expert only. Backward treats the gate as
``softmax(z / tau)`` so that all experts receive weight gradients.
"""

from __future__ import annotations

import math
from enum import StrEnum

import attrs
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.grad import conv2d_input, conv2d_weight

from ..bitcore import BitPlaneTensor, ConvGeometry, ScaleVector, bconv2d_packed, binarize_pack
from ..errors import ConfigError, GeometryError
from .gating import GateState, aggregate_psi, gate_backward, gate_forward
from .nodes import LayerKind
from .ste import pack_weights, sign_ste, weight_binarize_ste


class WeightMode(StrEnum):
    REAL = "real"
    BINARY = "binary"


class ActivationMode(StrEnum):
    BINARY = "binary"
    # Identity instead of sign; only for finite-difference checks.
    SURROGATE = "surrogate"


class GateMode(StrEnum):
    WTA = "wta"
    SOFTMAX = "softmax"


@attrs.frozen(eq=False)
class ExpertConvCache:
    """Tensors retained by the forward pass of :class:`ExpertConvFunction`."""

    x_b: torch.Tensor
    z: torch.Tensor
    theta: torch.Tensor
    alpha: torch.Tensor
    phi: torch.Tensor
    tau: float
    stride: int
    groups: int
    hard: bool = True


@attrs.frozen(eq=False)
class ExpertGrads:
    d_x: torch.Tensor
    d_z: torch.Tensor
    d_theta: torch.Tensor
    d_alpha: torch.Tensor


def _per_channel(v: torch.Tensor) -> torch.Tensor:
    return v.view(1, -1, 1, 1)


def _per_sample(v: torch.Tensor) -> torch.Tensor:
    return v.view(-1, 1, 1, 1)


def _hard_forward(x_b, theta, alpha, selected, stride, groups) -> torch.Tensor:
    # Every used expert is applied to the whole batch and rows are picked with
    # ``where``, so a sample's output does not depend on what others selected.
    out: torch.Tensor | None = None
    for e in torch.unique(selected).tolist():
        y = F.conv2d(x_b, theta[e], stride=stride, groups=groups) * _per_channel(alpha[e])
        out = y if out is None else torch.where(_per_sample(selected == e), y, out)
    assert out is not None
    return out


def _soft_forward(x_b, theta, alpha, phi, stride, groups) -> torch.Tensor:
    out = None
    for e in range(theta.shape[0]):
        y = F.conv2d(x_b, theta[e], stride=stride, groups=groups) * _per_channel(alpha[e])
        term = _per_sample(phi[:, e]) * y
        out = term if out is None else out + term
    return out


def ebconv_backward(cache: ExpertConvCache | None, grad_out: torch.Tensor) -> ExpertGrads:
    """Gradients of the expert convolution given the forward cache.

    With ``s = softmax(z / tau)`` and ``phi`` the forward gate:
    ``d_theta[e] = conv_weight_grad(x, s_e * a * g)``, the gate path
    ``d_z = gate_backward(z, <g, a * conv(x, theta_e)>, tau)``, where ``a`` is
    the selected expert's scale under WTA and ``alpha_e`` otherwise. ``d_alpha``
    follows ``phi`` (the selected expert under WTA), and ``d_x`` sums the input
    gradients of the experts weighted by ``phi``.
    """
    if cache is None:
        raise RuntimeError("ebconv_backward called without a forward cache")

    x_b, theta, alpha = cache.x_b, cache.theta, cache.alpha
    n_experts = theta.shape[0]
    s = torch.softmax(cache.z / cache.tau, dim=-1)

    d_theta = torch.empty_like(theta)
    d_alpha = torch.empty_like(alpha)
    d_x = torch.zeros_like(x_b)
    if cache.hard:
        # the forward scaled every sample by its winner's alpha
        g_selected = grad_out * alpha[cache.phi.argmax(dim=-1)][:, :, None, None]
    routed = []
    for e in range(n_experts):
        y_e = F.conv2d(x_b, theta[e], stride=cache.stride, groups=cache.groups)
        g_scaled = g_selected if cache.hard else grad_out * _per_channel(alpha[e])
        routed.append((g_scaled * y_e).sum(dim=(1, 2, 3)))
        d_theta[e] = conv2d_weight(
            x_b, theta[e].shape, _per_sample(s[:, e]) * g_scaled, stride=cache.stride, groups=cache.groups
        )
        d_alpha[e] = (_per_sample(cache.phi[:, e]) * grad_out * y_e).sum(dim=(0, 2, 3))
        if bool((cache.phi[:, e] != 0).any()):
            d_x = d_x + conv2d_input(
                x_b.shape, theta[e], _per_sample(cache.phi[:, e]) * g_scaled, stride=cache.stride, groups=cache.groups
            )

    d_z = gate_backward(cache.z, torch.stack(routed, dim=1), cache.tau)
    return ExpertGrads(d_x=d_x, d_z=d_z, d_theta=d_theta, d_alpha=d_alpha)


class ExpertConvFunction(torch.autograd.Function):
    """Per-sample expert selection with the softmax surrogate in backward.

    ``x_b`` is the already binarized and padded input, ``z`` the gate logits
    (B, N), ``theta`` the effective weights (N, O, I/G, k, k) and ``alpha``
    the per-expert channel scales (N, O).
    """

    @staticmethod
    def forward(ctx, x_b, z, theta, alpha, tau: float, stride: int, groups: int, hard: bool):
        if hard:
            phi = gate_forward(z).onehot
            out = _hard_forward(x_b, theta, alpha, phi.argmax(dim=-1), stride, groups)
        else:
            phi = torch.softmax(z / tau, dim=-1)
            out = _soft_forward(x_b, theta, alpha, phi, stride, groups)
        ctx.save_for_backward(x_b, z, theta, alpha, phi)
        ctx.conf = (tau, stride, groups, hard)
        return out

    @staticmethod
    def backward(ctx, grad_out):
        x_b, z, theta, alpha, phi = ctx.saved_tensors
        tau, stride, groups, hard = ctx.conf
        cache = ExpertConvCache(
            x_b=x_b, z=z, theta=theta, alpha=alpha, phi=phi, tau=tau, stride=stride, groups=groups, hard=hard
        )
        grads = ebconv_backward(cache, grad_out)
        return grads.d_x, grads.d_z, grads.d_theta, grads.d_alpha, None, None, None, None


class ExpertBank(nn.Module):
    """Latent expert weights ``theta`` (N, O, I/G, k, k), gate projection ``omega``
    (C_in, N), per-expert scales ``alpha`` (N, O) and temperature ``tau``."""

    def __init__(self, geom: ConvGeometry, n_experts: int = 1, tau: float = 1.0) -> None:
        super().__init__()
        if n_experts < 1:
            raise ConfigError(f"n_experts must be >= 1, got {n_experts}")
        if tau <= 0:
            raise ConfigError(f"tau must be positive, got {tau}")
        self.geom = geom
        self.tau = float(tau)
        fan_in = geom.reduction_length
        bound = 1.0 / math.sqrt(fan_in)
        self.theta = nn.Parameter(torch.empty(n_experts, *geom.weight_shape).uniform_(-bound, bound))
        self.omega = nn.Parameter(self._fresh_omega(n_experts))
        self.alpha = nn.Parameter(torch.ones(n_experts, geom.out_channels))

    def _fresh_omega(self, n_experts: int, generator: torch.Generator | None = None) -> torch.Tensor:
        bound = 1.0 / math.sqrt(self.geom.in_channels)
        omega = torch.empty(self.geom.in_channels, n_experts)
        return omega.uniform_(-bound, bound, generator=generator)

    @property
    def n_experts(self) -> int:
        return int(self.theta.shape[0])

    @torch.no_grad()
    def clamp_latent_(self) -> None:
        self.theta.clamp_(-1.0, 1.0)

    @torch.no_grad()
    def replicate_experts(self, n_experts: int, *, generator: torch.Generator | None = None) -> None:
        """Copy expert 0 (weights and scales) into ``n_experts`` slots; ``omega`` is drawn fresh."""
        if n_experts < 1:
            raise ConfigError(f"n_experts must be >= 1, got {n_experts}")
        theta0 = self.theta[0:1].detach().clone()
        alpha0 = self.alpha[0:1].detach().clone()
        like = self.omega
        self.theta = nn.Parameter(theta0.repeat(n_experts, 1, 1, 1, 1))
        self.alpha = nn.Parameter(alpha0.repeat(n_experts, 1))
        self.omega = nn.Parameter(self._fresh_omega(n_experts, generator).to(device=like.device, dtype=like.dtype))

    @torch.no_grad()
    def init_alpha_from_latent_(self) -> None:
        """Scale alpha by the mean absolute latent weight of each expert channel."""
        self.alpha.mul_(self.theta.abs().mean(dim=(2, 3, 4)))

    def effective_weights(self, weight_mode: WeightMode) -> torch.Tensor:
        if weight_mode is WeightMode.BINARY:
            return weight_binarize_ste(self.theta)
        return self.theta

    def packed_experts(self) -> list[BitPlaneTensor]:
        return [pack_weights(self.theta[e]) for e in range(self.n_experts)]


def _binarize_input(x: torch.Tensor, padding: int, activation_mode: ActivationMode) -> torch.Tensor:
    if activation_mode is ActivationMode.BINARY:
        x_b, pad_value = sign_ste(x), -1.0
    else:
        x_b, pad_value = x, 0.0
    if padding:
        x_b = F.pad(x_b, (padding,) * 4, value=pad_value)
    return x_b


def ebconv_forward(
    x: torch.Tensor,
    bank: ExpertBank,
    geom: ConvGeometry,
    *,
    weight_mode: WeightMode = WeightMode.REAL,
    activation_mode: ActivationMode = ActivationMode.BINARY,
    gate_mode: GateMode = GateMode.WTA,
) -> tuple[torch.Tensor, GateState]:
    """Expert binary convolution of the real input ``x`` (B, C, H, W).

    ``psi`` is taken on ``x`` before binarization. In real-weights mode the
    binarized input meets the latent weights; in binary-weights mode both
    operands are signs.
    """
    if x.dim() != 4 or x.shape[1] != geom.in_channels:
        raise GeometryError(f"input shape {tuple(x.shape)} does not match {geom}")
    if tuple(bank.theta.shape[1:]) != geom.weight_shape:
        raise GeometryError(f"expert weights {tuple(bank.theta.shape)} do not match {geom}")

    z = aggregate_psi(x, bank.omega)
    x_b = _binarize_input(x, geom.padding, activation_mode)
    theta = bank.effective_weights(weight_mode)
    y = ExpertConvFunction.apply(
        x_b, z, theta, bank.alpha, bank.tau, geom.stride, geom.groups, gate_mode is GateMode.WTA
    )
    return y, gate_forward(z)


class _BinaryConvBase(nn.Module):
    kind: LayerKind

    def __init__(self, geom: ConvGeometry) -> None:
        super().__init__()
        self.geom = geom
        self.weight_mode = WeightMode.REAL
        self.activation_mode = ActivationMode.BINARY
        self.gate_mode = GateMode.WTA
        self.use_packed = False
        self._packed_key: tuple | None = None
        self._packed: list[BitPlaneTensor] = []

    def configure(
        self,
        *,
        weight_mode: WeightMode | None = None,
        activation_mode: ActivationMode | None = None,
        gate_mode: GateMode | None = None,
        use_packed: bool | None = None,
    ) -> None:
        if weight_mode is not None:
            self.weight_mode = WeightMode(weight_mode)
        if activation_mode is not None:
            self.activation_mode = ActivationMode(activation_mode)
        if gate_mode is not None:
            self.gate_mode = GateMode(gate_mode)
        if use_packed is not None:
            self.use_packed = bool(use_packed)

    def _packed_path_active(self) -> bool:
        return (
            self.use_packed
            and not self.training
            and self.weight_mode is WeightMode.BINARY
            and self.activation_mode is ActivationMode.BINARY
            and self.gate_mode is GateMode.WTA
        )

    def _latent(self) -> torch.Tensor:
        raise NotImplementedError

    def _packed_weights(self) -> list[BitPlaneTensor]:
        latent = self._latent()
        key = (latent.data_ptr(), latent._version, tuple(latent.shape))
        if key != self._packed_key:
            self._packed = [pack_weights(latent[e]) for e in range(latent.shape[0])]
            self._packed_key = key
        return self._packed

    def _packed_conv(self, x: torch.Tensor, alpha: torch.Tensor, selected: torch.Tensor) -> torch.Tensor:
        x_np = x.detach().to("cpu", torch.float64).numpy()
        alpha_np = alpha.detach().to("cpu", torch.float64).numpy()
        packed = self._packed_weights()
        ho, wo = self.geom.output_hw(x.shape[2], x.shape[3])
        out = np.empty((x.shape[0], self.geom.out_channels, ho, wo), dtype=np.float64)
        sel = selected.cpu().numpy()
        for e in np.unique(sel):
            idx = np.flatnonzero(sel == e)
            out[idx] = bconv2d_packed(binarize_pack(x_np[idx], "c"), packed[e], self.geom, ScaleVector(alpha_np[e]))
        return torch.from_numpy(out).to(device=x.device, dtype=x.dtype)


class EBConv2d(_BinaryConvBase):
    kind = LayerKind.EBCONV

    def __init__(self, geom: ConvGeometry, n_experts: int = 1, tau: float = 1.0) -> None:
        super().__init__(geom)
        self.bank = ExpertBank(geom, n_experts, tau)
        self.last_gate: GateState | None = None

    @property
    def n_experts(self) -> int:
        return self.bank.n_experts

    def _latent(self) -> torch.Tensor:
        return self.bank.theta

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self._packed_path_active():
            gate = gate_forward(aggregate_psi(x, self.bank.omega))
            y = self._packed_conv(x, self.bank.alpha, gate.selected)
        else:
            y, gate = ebconv_forward(
                x,
                self.bank,
                self.geom,
                weight_mode=self.weight_mode,
                activation_mode=self.activation_mode,
                gate_mode=self.gate_mode,
            )
        self.last_gate = gate
        return y

    def clamp_latent_(self) -> None:
        self.bank.clamp_latent_()

    def init_alpha_from_latent_(self) -> None:
        self.bank.init_alpha_from_latent_()

    def extra_repr(self) -> str:
        g = self.geom
        return (
            f"{g.in_channels}, {g.out_channels}, kernel={g.kernel_h}, stride={g.stride}, "
            f"groups={g.groups}, experts={self.n_experts}, tau={self.bank.tau}"
        )


class BinaryConv2d(_BinaryConvBase):
    """Plain binary convolution: ``conv(sign(x), sign(theta)) * alpha``."""

    kind = LayerKind.BCONV

    def __init__(self, geom: ConvGeometry) -> None:
        super().__init__(geom)
        bound = 1.0 / math.sqrt(geom.reduction_length)
        self.theta = nn.Parameter(torch.empty(*geom.weight_shape).uniform_(-bound, bound))
        self.alpha = nn.Parameter(torch.ones(geom.out_channels))

    def _latent(self) -> torch.Tensor:
        return self.theta.unsqueeze(0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.geom.in_channels:
            raise GeometryError(f"input shape {tuple(x.shape)} does not match {self.geom}")
        if self._packed_path_active():
            selected = torch.zeros(x.shape[0], dtype=torch.long)
            return self._packed_conv(x, self.alpha.unsqueeze(0), selected)
        x_b = _binarize_input(x, self.geom.padding, self.activation_mode)
        w = weight_binarize_ste(self.theta) if self.weight_mode is WeightMode.BINARY else self.theta
        y = F.conv2d(x_b, w, stride=self.geom.stride, groups=self.geom.groups)
        return y * _per_channel(self.alpha)

    @torch.no_grad()
    def clamp_latent_(self) -> None:
        self.theta.clamp_(-1.0, 1.0)

    @torch.no_grad()
    def init_alpha_from_latent_(self) -> None:
        self.alpha.mul_(self.theta.abs().mean(dim=(1, 2, 3)))

    def extra_repr(self) -> str:
        g = self.geom
        return f"{g.in_channels}, {g.out_channels}, kernel={g.kernel_h}, stride={g.stride}, groups={g.groups}"
