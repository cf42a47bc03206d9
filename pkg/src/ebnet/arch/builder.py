from __future__ import annotations

from loguru import logger

from .network import EBNet
from .plan import plan_network
from .spec import ArchSpec


def build_network(spec: ArchSpec) -> EBNet:
    plan = plan_network(spec)
    model = EBNet(plan)
    n_params = sum(p.numel() for p in model.parameters())
    logger.debug(
        "Built {} with {} experts: {} units, {} parameters",
        spec.name,
        spec.n_experts,
        sum(1 for _ in plan.iter_units()),
        n_params,
    )
    return model
