"""Static topology of a network described by an :class:`ArchSpec`.

The plan is what both the module builder and the cost model read, so the two
cannot disagree about shapes.
"""

from __future__ import annotations

import math
from typing import Iterator

import attrs

from ..bitcore import ConvGeometry
from ..errors import ShapeError
from ..graph import LayerKind, LayerNode
from .spec import UNITS_PER_BLOCK, ArchSpec


def _down(hw: int, stride: int) -> int:
    return math.ceil(hw / stride)


@attrs.frozen
class DownsamplePlan:
    in_channels: int
    out_channels: int
    stride: int
    variant: str
    reduction: int
    in_hw: int

    @property
    def out_hw(self) -> int:
        return _down(self.in_hw, self.stride)

    @property
    def mid_channels(self) -> int:
        return self.in_channels // self.reduction


@attrs.frozen
class UnitPlan:
    name: str
    geom: ConvGeometry
    in_hw: int
    n_experts: int
    downsample: DownsamplePlan | None = None
    is_mix: bool = False

    @property
    def out_hw(self) -> int:
        return self.geom.output_hw(self.in_hw, self.in_hw)[0]


@attrs.frozen
class BlockPlan:
    name: str
    units: tuple[UnitPlan, ...]
    mix: UnitPlan | None = None

    def all_units(self) -> Iterator[UnitPlan]:
        yield from self.units
        if self.mix is not None:
            yield self.mix


@attrs.frozen
class StagePlan:
    index: int
    width: int
    groups: int
    blocks: tuple[BlockPlan, ...]
    in_hw: int
    out_hw: int

    @property
    def name(self) -> str:
        return f"stage{self.index}"


@attrs.frozen
class StemPlan:
    kind: str
    in_channels: int
    out_channels: int
    in_hw: int

    @property
    def geom(self) -> ConvGeometry:
        if self.kind == "imagenet7x7":
            return ConvGeometry.square(self.in_channels, self.out_channels, 7, stride=2, padding=3)
        return ConvGeometry.square(self.in_channels, self.out_channels, 3, stride=1, padding=1)

    @property
    def conv_hw(self) -> int:
        return self.geom.output_hw(self.in_hw, self.in_hw)[0]

    @property
    def out_hw(self) -> int:
        if self.kind == "imagenet7x7":
            return (self.conv_hw + 2 - 3) // 2 + 1
        return self.conv_hw


@attrs.frozen
class HeadPlan:
    in_channels: int
    in_hw: int
    classes: int


@attrs.frozen
class NetworkPlan:
    spec: ArchSpec
    stem: StemPlan
    stages: tuple[StagePlan, ...]
    head: HeadPlan

    def iter_units(self) -> Iterator[UnitPlan]:
        for stage in self.stages:
            for block in stage.blocks:
                yield from block.all_units()

    def iter_nodes(self) -> Iterator[LayerNode]:
        """Flattened layer graph in execution order."""
        stem = self.stem
        c = stem.out_channels
        yield LayerNode(
            "stem.conv",
            LayerKind.REAL_CONV,
            (stem.in_channels, stem.in_hw, stem.in_hw),
            (c, stem.conv_hw, stem.conv_hw),
            params={"geom": stem.geom},
        )
        conv_shape = (c, stem.conv_hw, stem.conv_hw)
        yield LayerNode("stem.bn", LayerKind.BN, conv_shape, conv_shape, ("stem.conv",))
        yield LayerNode("stem.act", LayerKind.PRELU, conv_shape, conv_shape, ("stem.bn",))
        last = "stem.act"
        if stem.kind == "imagenet7x7":
            yield LayerNode("stem.pool", LayerKind.MAXPOOL, conv_shape, (c, stem.out_hw, stem.out_hw), (last,))
            last = "stem.pool"

        for unit in self.iter_units():
            yield from _unit_nodes(unit, last)
            last = f"{unit.name}.add"

        head = self.head
        feat = (head.in_channels, head.in_hw, head.in_hw)
        yield LayerNode("head.pool", LayerKind.AVGPOOL, feat, (head.in_channels, 1, 1), (last,), {"global": True})
        yield LayerNode(
            "head.fc", LayerKind.LINEAR, (head.in_channels, 1, 1), (head.classes, 1, 1), ("head.pool",)
        )


def _unit_nodes(unit: UnitPlan, source: str) -> Iterator[LayerNode]:
    g = unit.geom
    in_shape = (g.in_channels, unit.in_hw, unit.in_hw)
    out_shape = (g.out_channels, unit.out_hw, unit.out_hw)
    kind = LayerKind.GROUP_MIX if unit.is_mix else LayerKind.EBCONV
    n = unit.name
    yield LayerNode(f"{n}.bn", LayerKind.BN, in_shape, in_shape, (source,))
    yield LayerNode(f"{n}.conv", kind, in_shape, out_shape, (f"{n}.bn",), {"geom": g, "n_experts": unit.n_experts})
    yield LayerNode(f"{n}.act", LayerKind.PRELU, out_shape, out_shape, (f"{n}.conv",))
    skip = source
    if unit.downsample is not None:
        d = unit.downsample
        yield LayerNode(
            f"{n}.downsample",
            LayerKind.DOWNSAMPLE,
            in_shape,
            out_shape,
            (source,),
            {"variant": d.variant, "stride": d.stride, "mid_channels": d.mid_channels},
        )
        skip = f"{n}.downsample"
    yield LayerNode(f"{n}.add", LayerKind.ADD, out_shape, out_shape, (skip, f"{n}.act"))


def _stem_plan(spec: ArchSpec) -> StemPlan:
    return StemPlan(spec.stem, spec.in_channels, spec.base_width, spec.input_resolution)


def plan_network(spec: ArchSpec) -> NetworkPlan:
    stem = _stem_plan(spec)
    hw = stem.out_hw
    variant = spec.resolved_downsample
    reduction = spec.reduction if variant != "vanilla" else 1

    stages = []
    for i, (n_blocks, width, prev, g) in enumerate(
        zip(spec.blocks, spec.stage_widths, spec.stage_inputs, spec.groups)
    ):
        stage_in_hw = hw
        blocks = []
        channels = prev
        for j in range(n_blocks):
            units = []
            for k in range(UNITS_PER_BLOCK):
                stride = 2 if (i > 0 and j == 0 and k == 0) else 1
                geom = ConvGeometry.square(channels, width, 3, stride=stride, padding=1, groups=g)
                downsample = None
                if channels != width or stride != 1:
                    downsample = DownsamplePlan(channels, width, stride, variant, reduction, hw)
                unit = UnitPlan(f"stage{i}.block{j}.unit{k}", geom, hw, spec.n_experts, downsample)
                units.append(unit)
                hw = unit.out_hw
                channels = width
            mix = None
            if spec.mix_enabled:
                mix = UnitPlan(
                    f"stage{i}.block{j}.mix", ConvGeometry.square(width, width, 1), hw, 1, is_mix=True
                )
            blocks.append(BlockPlan(f"stage{i}.block{j}", tuple(units), mix))
        stages.append(StagePlan(i, width, g, tuple(blocks), stage_in_hw, hw))

    if hw < 1:
        raise ShapeError(f"input resolution {spec.input_resolution} collapses before the classifier")
    head = HeadPlan(spec.stage_widths[-1], hw, spec.classes)
    return NetworkPlan(spec, stem, tuple(stages), head)


def representational_states(c: int, h: int, w: int) -> int:
    """log2 of the number of distinct binary feature tensors of shape (c, h, w)."""
    if min(c, h, w) < 1:
        raise ShapeError(f"dimensions must be positive, got ({c}, {h}, {w})")
    return c * h * w
