"""Operation and parameter counts of a planned network.

BOPs and FLOPs count multiply-accumulates per sample. Element-wise layers
(batch norm, activations, pooling) cost one FLOP per element.
"""

from __future__ import annotations

import json
import math
from typing import Iterable

import attrs
from pydantic import BaseModel, ConfigDict, Field

from ..bitcore import ConvGeometry
from ..graph import LayerKind, LayerNode
from .plan import NetworkPlan, plan_network
from .spec import ArchSpec


class CostReport(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    bops: int = Field(ge=0, description="Binary multiply-accumulates per sample.")
    flops: int = Field(ge=0, description="Real-valued multiply-accumulates per sample, excluding BOPs.")
    binary_param_bits: int = Field(ge=0)
    real_param_count: int = Field(ge=0)

    @property
    def model_size_bytes(self) -> int:
        return math.ceil(self.binary_param_bits / 8) + 4 * self.real_param_count

    def as_dict(self) -> dict[str, int]:
        return {**self.model_dump(), "model_size_bytes": self.model_size_bytes}

    def to_text(self) -> str:
        return "".join(f"{key}={value}\n" for key, value in self.as_dict().items())

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2) + "\n"

    def within(self, max_bops: int, max_flops: int) -> bool:
        return self.bops <= max_bops and self.flops <= max_flops


@attrs.frozen
class LayerCost:
    name: str
    kind: LayerKind
    bops: int = 0
    flops: int = 0
    binary_bits: int = 0
    real_params: int = 0


def _conv_macs(geom: ConvGeometry, out_hw: tuple[int, int]) -> int:
    ho, wo = out_hw
    return ho * wo * geom.out_channels * geom.reduction_length


def _downsample_cost(node: LayerNode) -> tuple[int, int]:
    cin, _, _ = node.in_shape
    cout, ho, wo = node.out_shape
    pixels = ho * wo
    variant = node.params["variant"]
    flops = cin * pixels if node.params["stride"] > 1 else 0
    if variant == "vanilla":
        flops += cin * cout * pixels + cout * pixels
        return flops, cin * cout + 4 * cout
    mid = node.params["mid_channels"]
    flops += cin * mid * pixels + mid * pixels + mid * cout * pixels + cout * pixels
    params = cin * mid + 4 * mid + mid * cout + 4 * cout
    if variant in ("relu", "prelu"):
        flops += mid * pixels
    if variant == "prelu":
        params += mid
    return flops, params


def node_cost(node: LayerNode) -> LayerCost:
    kind = node.kind
    c_in = node.in_shape[0]
    c_out, ho, wo = node.out_shape
    if kind is LayerKind.REAL_CONV:
        geom: ConvGeometry = node.params["geom"]
        weights = geom.out_channels * geom.reduction_length
        return LayerCost(node.name, kind, flops=_conv_macs(geom, (ho, wo)), real_params=weights)
    if kind in (LayerKind.EBCONV, LayerKind.GROUP_MIX, LayerKind.BCONV):
        geom = node.params["geom"]
        n = node.params.get("n_experts", 1)
        bits = n * geom.out_channels * geom.reduction_length
        if kind is LayerKind.EBCONV:
            # gate projection psi and per-expert scales
            return LayerCost(
                node.name,
                kind,
                bops=_conv_macs(geom, (ho, wo)),
                flops=c_in * n,
                binary_bits=bits,
                real_params=n * c_out + c_in * n,
            )
        return LayerCost(node.name, kind, bops=_conv_macs(geom, (ho, wo)), binary_bits=bits, real_params=c_out)
    if kind is LayerKind.BN:
        return LayerCost(node.name, kind, flops=node.in_elements, real_params=4 * c_in)
    if kind is LayerKind.PRELU:
        return LayerCost(node.name, kind, flops=node.out_elements, real_params=c_out)
    if kind is LayerKind.MAXPOOL:
        return LayerCost(node.name, kind, flops=node.out_elements)
    if kind is LayerKind.AVGPOOL:
        elements = node.in_elements if node.params.get("global") else node.out_elements
        return LayerCost(node.name, kind, flops=elements)
    if kind is LayerKind.LINEAR:
        return LayerCost(node.name, kind, flops=c_in * c_out, real_params=c_in * c_out + c_out)
    if kind is LayerKind.DOWNSAMPLE:
        flops, params = _downsample_cost(node)
        return LayerCost(node.name, kind, flops=flops, real_params=params)
    return LayerCost(node.name, kind)


def layer_costs(plan: NetworkPlan) -> list[LayerCost]:
    return [node_cost(node) for node in plan.iter_nodes()]


def summarize(costs: Iterable[LayerCost]) -> CostReport:
    bops = flops = bits = real = 0
    for c in costs:
        bops += c.bops
        flops += c.flops
        bits += c.binary_bits
        real += c.real_params
    return CostReport(bops=bops, flops=flops, binary_param_bits=bits, real_param_count=real)


def cost_model(spec: ArchSpec) -> CostReport:
    return summarize(layer_costs(plan_network(spec)))
