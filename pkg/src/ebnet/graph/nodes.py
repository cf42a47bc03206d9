from __future__ import annotations

from enum import StrEnum
from typing import Any

import attrs


class LayerKind(StrEnum):
    REAL_CONV = "real_conv"
    BCONV = "bconv"
    EBCONV = "ebconv"
    BN = "bn"
    PRELU = "prelu"
    MAXPOOL = "maxpool"
    AVGPOOL = "avgpool"
    LINEAR = "linear"
    ADD = "add"
    GROUP_MIX = "group_mix"
    DOWNSAMPLE = "downsample"


CHW = tuple[int, int, int]


@attrs.frozen
class LayerNode:
    """One node of the flattened layer graph; ``inputs`` name the producing nodes."""

    name: str
    kind: LayerKind
    in_shape: CHW
    out_shape: CHW
    inputs: tuple[str, ...] = ()
    params: dict[str, Any] = attrs.field(factory=dict, hash=False)

    @property
    def out_elements(self) -> int:
        c, h, w = self.out_shape
        return c * h * w

    @property
    def in_elements(self) -> int:
        c, h, w = self.in_shape
        return c * h * w
