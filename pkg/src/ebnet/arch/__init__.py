from .builder import build_network
from .cost import CostReport, LayerCost, cost_model, layer_costs, node_cost, summarize
from .network import EBNet
from .plan import (
    BlockPlan,
    DownsamplePlan,
    HeadPlan,
    NetworkPlan,
    StagePlan,
    StemPlan,
    UnitPlan,
    plan_network,
    representational_states,
)
from .search import (
    DIRECTIONS,
    Candidate,
    SearchConfig,
    SearchResult,
    SearchRound,
    apply_setting,
    default_settings,
    search,
)
from .spec import UNITS_PER_BLOCK, ArchSpec, format_arch, parse_arch

__all__ = [
    "build_network",
    "CostReport",
    "LayerCost",
    "cost_model",
    "layer_costs",
    "node_cost",
    "summarize",
    "EBNet",
    "BlockPlan",
    "DownsamplePlan",
    "HeadPlan",
    "NetworkPlan",
    "StagePlan",
    "StemPlan",
    "UnitPlan",
    "plan_network",
    "representational_states",
    "DIRECTIONS",
    "Candidate",
    "SearchConfig",
    "SearchResult",
    "SearchRound",
    "apply_setting",
    "default_settings",
    "search",
    "UNITS_PER_BLOCK",
    "ArchSpec",
    "format_arch",
    "parse_arch",
]
