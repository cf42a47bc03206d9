"""The four-step optimization policy.

1. Stage I training of the single-expert network.
2. Expert replication: expert 0 is copied into every slot, gates start fresh,
   BN statistics are recalibrated.
3. Stage I training of the multi-expert network.
4. Stage II training with binary weights and activations.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import torch
from loguru import logger

from ..arch import ArchSpec, EBNet, build_network
from ..checkpoint import Checkpoint, load_checkpoint, load_state_records, save_checkpoint, state_records
from ..data import DataBundle, make_loader
from ..errors import ConfigError
from ..graph import binary_convs
from ._staging import define_policy, finished_steps, input, policy_step, spec, state, transient
from .config import PolicyConfig, TrainConfig
from .loop import (
    EpochRecord,
    LossHook,
    RunMetrics,
    apply_stage,
    binarize_weights,
    recalibrate_bn,
    replicate_model,
    train_stage,
)

STEP_IDS = ("step1", "step2", "step3", "step4")
MODEL_PREFIX = "model."


def _optional_path(value: Any) -> Path | None:
    return None if value is None else Path(value)


@define_policy(save_path_field="out_dir", seed_field="seed", kw_only=True)
class TrainingPolicy:
    arch: ArchSpec = spec()
    config: PolicyConfig = spec(factory=PolicyConfig)
    seed: int = spec(default=0)

    data: DataBundle | None = input(default=None)
    loss_hook: LossHook | None = input(default=None)

    out_dir: Path | None = transient(default=None, converter=_optional_path)

    model: EBNet | None = state(default=None)
    weights: str = state(default="real")
    history: dict[str, list[dict]] = state(factory=dict)
    utilization: dict[str, dict[str, list[float]]] = state(factory=dict)

    def _require_data(self) -> DataBundle:
        if self.data is None:
            raise ConfigError("the training policy needs a dataset")
        return self.data

    def _train(self, step: str, cfg: TrainConfig) -> None:
        cfg = cfg.model_copy(update={"seed": self.seed})
        metrics = train_stage(
            self.model, self._require_data(), cfg, step=step, out_dir=self.out_dir, loss_hook=self.loss_hook
        )
        self._record(metrics)

    def _record(self, metrics: RunMetrics) -> None:
        self.history = {**self.history, metrics.step: metrics.as_state()}
        if metrics.utilization:
            self.utilization = {**self.utilization, metrics.step: metrics.utilization}

    @policy_step(id="step1", order=1)
    def train_single_expert(self) -> None:
        torch.manual_seed(self.seed)
        self.model = build_network(self.arch.replace(n_experts=1))
        self._train("step1", self.config.stage1)

    @policy_step(id="step2", order=2)
    def replicate(self) -> None:
        generator = torch.Generator().manual_seed(self.seed)
        self.model = replicate_model(self.model, self.arch.n_experts, generator=generator)
        batches = self.config.recalibration_batches
        if batches and self.arch.n_experts > 1:
            data = self._require_data()
            loader = make_loader(data, split="train", batch_size=self.config.stage1.batch_size, seed=self.seed)
            recalibrate_bn(self.model, loader, batches)

    @policy_step(id="step3", order=3)
    def train_experts(self) -> None:
        if self.arch.n_experts == 1:
            logger.info("Single expert: step 1 already trained this network")
            return
        self._train("step3", self.config.stage1)

    @policy_step(id="step4", order=4)
    def train_binary(self) -> None:
        binarize_weights(self.model)
        self.weights = "binary"
        self._train("step4", self.config.stage2)

    def run(self, *, until: str = "step4") -> EBNet:
        """Run (or restore) every step up to and including ``until``."""
        if until not in STEP_IDS:
            raise ConfigError(f"unknown step {until!r}; expected one of {STEP_IDS}")
        steps = (self.train_single_expert, self.replicate, self.train_experts, self.train_binary)
        done = finished_steps(self)
        for step_id, step in zip(STEP_IDS, steps):
            if step_id not in done:
                step()
            if step_id == until:
                break
        apply_stage(self.model, "II" if self.weights == "binary" else "I")
        return self.model

    def metrics(self, step: str) -> RunMetrics | None:
        if step not in self.history:
            return None
        return RunMetrics(
            step=step,
            epochs=[EpochRecord(**row) for row in self.history[step]],
            utilization=self.utilization.get(step, {}),
        )


def load_model(path: str | Path, *, arch: ArchSpec | None = None) -> tuple[EBNet, dict[str, Any]]:
    """Network of a training checkpoint with its binarization stage applied; also returns the header meta."""
    ckpt = load_checkpoint(path, arch=arch)
    networks = ckpt.meta.get("networks", {})
    model_arch = ArchSpec.model_validate(networks["model"]) if "model" in networks else ckpt.arch
    model = build_network(model_arch)
    load_state_records(model, ckpt.records, prefix=MODEL_PREFIX)
    stage = "II" if ckpt.meta.get("state", {}).get("weights") == "binary" else "I"
    apply_stage(model, stage)
    model.eval()
    return model, dict(ckpt.meta)


def run_stage2_from(
    path: str | Path,
    data: DataBundle,
    cfg: TrainConfig,
    *,
    out_dir: str | Path | None = None,
    arch: ArchSpec | None = None,
    loss_hook: LossHook | None = None,
) -> tuple[EBNet, RunMetrics]:
    """Policy step 4 alone, starting from a stage I checkpoint."""
    if cfg.stage != "II":
        raise ConfigError("run_stage2_from needs a stage II recipe")
    model, meta = load_model(path, arch=arch)
    if meta.get("state", {}).get("weights") == "binary":
        logger.warning("{} already holds binary weights; training stage II again", path)
    else:
        binarize_weights(model)
    metrics = train_stage(model, data, cfg, step="step4", out_dir=out_dir, loss_hook=loss_hook)
    return model, metrics


def save_model(
    path: str | Path,
    model: EBNet,
    *,
    step: str,
    seed: int = 0,
    history: dict[str, list[dict]] | None = None,
) -> None:
    """Write ``model`` in the layout of a policy snapshot so :func:`load_model` can reopen it."""
    weights = "binary" if any(conv.weight_mode == "binary" for _, conv in binary_convs(model)) else "real"
    save_checkpoint(
        path,
        Checkpoint(
            arch=model.spec,
            records=state_records(model, prefix=MODEL_PREFIX),
            seed=seed,
            counters={"steps_finished": 0},
            meta={
                "step": step,
                "finished": [],
                "networks": {"model": model.spec.model_dump(mode="json")},
                "state": {"weights": weights, "history": history or {}},
            },
        ),
    )
