from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import torch
import torch.nn as nn

from ..graph import (
    BinaryBlock,
    BinaryConv2d,
    BinaryUnit,
    ClassifierHead,
    DownsampleBlock,
    EBConv2d,
    LayerNode,
    Stem,
)
from .plan import NetworkPlan, UnitPlan
from .spec import ArchSpec


def _unit(plan: UnitPlan, tau: float) -> BinaryUnit:
    if plan.is_mix:
        return BinaryUnit(BinaryConv2d(plan.geom))
    downsample = None
    if plan.downsample is not None:
        d = plan.downsample
        downsample = DownsampleBlock(
            d.in_channels, d.out_channels, stride=d.stride, variant=d.variant, reduction=d.reduction
        )
    return BinaryUnit(EBConv2d(plan.geom, plan.n_experts, tau), downsample)


class EBNet(nn.Module):
    """Real stem, four stages of binary blocks and a real classifier.

    Submodule names follow the plan, e.g. ``stage1.block0.unit0.conv``.
    """

    def __init__(self, plan: NetworkPlan) -> None:
        super().__init__()
        self.plan = plan
        spec = plan.spec
        self.stem = Stem(plan.stem.kind, plan.stem.in_channels, plan.stem.out_channels)
        for stage in plan.stages:
            blocks = OrderedDict(
                (
                    f"block{j}",
                    BinaryBlock(
                        [_unit(u, spec.tau) for u in block.units],
                        None if block.mix is None else _unit(block.mix, spec.tau),
                    ),
                )
                for j, block in enumerate(stage.blocks)
            )
            self.add_module(stage.name, nn.Sequential(blocks))
        self.head = ClassifierHead(plan.head.in_channels, plan.head.classes)

    @property
    def spec(self) -> ArchSpec:
        return self.plan.spec

    def stages(self) -> Iterator[nn.Sequential]:
        for stage in self.plan.stages:
            yield getattr(self, stage.name)

    def layer_nodes(self) -> list[LayerNode]:
        return list(self.plan.iter_nodes())

    def features(self, x: torch.Tensor) -> torch.Tensor:
        x = self.stem(x)
        for stage in self.stages():
            x = stage(x)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))
