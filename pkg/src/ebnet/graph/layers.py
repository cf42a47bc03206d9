from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Literal

import torch
import torch.nn as nn

from ..bitcore import ConvGeometry
from ..errors import ConfigError, ShapeError
from .ebconv import ActivationMode, BinaryConv2d, EBConv2d, GateMode, WeightMode

DownsampleVariant = Literal["vanilla", "linear", "relu", "prelu"]
StemKind = Literal["imagenet7x7", "cifar3x3"]


class DownsampleBlock(nn.Sequential):
    """Real-valued shortcut used where a unit changes width or resolution.

    ``vanilla`` is a single 1x1 conv. The other variants go through a
    bottleneck of ``in_channels // reduction`` channels with no activation
    (``linear``), ReLU or PReLU in between.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        *,
        stride: int = 1,
        variant: DownsampleVariant = "prelu",
        reduction: int = 1,
    ) -> None:
        layers: OrderedDict[str, nn.Module] = OrderedDict()
        if stride > 1:
            layers["pool"] = nn.AvgPool2d(stride, ceil_mode=True, count_include_pad=False)

        if variant == "vanilla":
            layers["conv"] = nn.Conv2d(in_channels, out_channels, 1, bias=False)
            layers["bn"] = nn.BatchNorm2d(out_channels)
        elif variant in ("linear", "relu", "prelu"):
            if reduction < 1 or in_channels % reduction:
                raise ConfigError(
                    f"in_channels={in_channels} is not divisible by the reduction ratio {reduction}"
                )
            mid = in_channels // reduction
            layers["reduce"] = nn.Conv2d(in_channels, mid, 1, bias=False)
            layers["reduce_bn"] = nn.BatchNorm2d(mid)
            if variant == "relu":
                layers["act"] = nn.ReLU()
            elif variant == "prelu":
                layers["act"] = nn.PReLU(mid)
            layers["expand"] = nn.Conv2d(mid, out_channels, 1, bias=False)
            layers["expand_bn"] = nn.BatchNorm2d(out_channels)
        else:
            raise ConfigError(f"Unknown downsample variant {variant!r}")

        super().__init__(layers)
        self.variant = variant
        self.reduction = reduction


class BinaryUnit(nn.Module):
    """``skip(x) + PReLU(conv(sign(BN(x))))``; skip is identity unless a downsample block is given."""

    def __init__(self, conv: EBConv2d | BinaryConv2d, downsample: DownsampleBlock | None = None) -> None:
        super().__init__()
        geom = conv.geom
        if downsample is None and (geom.in_channels != geom.out_channels or geom.stride != 1):
            raise ShapeError(f"unit {geom} changes shape and needs a downsample block on its skip path")
        self.bn = nn.BatchNorm2d(geom.in_channels)
        self.conv = conv
        self.act = nn.PReLU(geom.out_channels)
        self.downsample = downsample

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.act(self.conv(self.bn(x)))
        skip = x if self.downsample is None else self.downsample(x)
        return skip + y


def group_mix_unit(channels: int) -> BinaryUnit:
    """Ungrouped binary 1x1 unit that mixes information across channel groups."""
    return BinaryUnit(BinaryConv2d(ConvGeometry.square(channels, channels, 1)))


class BinaryBlock(nn.Module):
    def __init__(self, units: list[BinaryUnit], mix: BinaryUnit | None = None) -> None:
        super().__init__()
        self.n_units = len(units)
        for k, unit in enumerate(units):
            self.add_module(f"unit{k}", unit)
        self.mix = mix

    def units(self) -> Iterator[BinaryUnit]:
        for k in range(self.n_units):
            yield getattr(self, f"unit{k}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for unit in self.units():
            x = unit(x)
        if self.mix is not None:
            x = self.mix(x)
        return x


class Stem(nn.Module):
    """Real-valued input layer: 7x7/2 conv plus 3x3/2 max-pool, or a 3x3/1 conv."""

    def __init__(self, kind: StemKind, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.stem_kind = kind
        if kind == "imagenet7x7":
            self.conv = nn.Conv2d(in_channels, out_channels, 7, stride=2, padding=3, bias=False)
        elif kind == "cifar3x3":
            self.conv = nn.Conv2d(in_channels, out_channels, 3, stride=1, padding=1, bias=False)
        else:
            raise ConfigError(f"Unknown stem {kind!r}")
        self.bn = nn.BatchNorm2d(out_channels)
        self.act = nn.PReLU(out_channels)
        self.pool = nn.MaxPool2d(3, stride=2, padding=1) if kind == "imagenet7x7" else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.act(self.bn(self.conv(x)))
        return x if self.pool is None else self.pool(x)


class ClassifierHead(nn.Module):
    def __init__(self, in_channels: int, classes: int) -> None:
        super().__init__()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(in_channels, classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(torch.flatten(self.pool(x), 1))


def binary_convs(model: nn.Module) -> Iterator[tuple[str, EBConv2d | BinaryConv2d]]:
    for name, module in model.named_modules():
        if isinstance(module, (EBConv2d, BinaryConv2d)):
            yield name, module


def expert_convs(model: nn.Module) -> Iterator[tuple[str, EBConv2d]]:
    for name, module in model.named_modules():
        if isinstance(module, EBConv2d):
            yield name, module


def configure_binary(
    model: nn.Module,
    *,
    weight_mode: WeightMode | str | None = None,
    activation_mode: ActivationMode | str | None = None,
    gate_mode: GateMode | str | None = None,
    use_packed: bool | None = None,
) -> None:
    """Switch every binary convolution of ``model`` to the given modes."""
    for _, conv in binary_convs(model):
        conv.configure(
            weight_mode=weight_mode,
            activation_mode=activation_mode,
            gate_mode=gate_mode,
            use_packed=use_packed,
        )


def clamp_latent_weights(model: nn.Module) -> None:
    for _, conv in binary_convs(model):
        conv.clamp_latent_()
