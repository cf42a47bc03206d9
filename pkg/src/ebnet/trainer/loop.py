"""Epoch loop, evaluation protocol and the model surgery between policy steps."""

from __future__ import annotations

import copy
import csv
import io
from pathlib import Path
from typing import Protocol

import attrs
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from loguru import logger

from ..arch import EBNet, build_network
from ..data import DataBundle, make_loader
from ..errors import ConfigError, FormatError
from ..graph import binary_convs, configure_binary, expert_convs, mixup_apply
from ..io import atomic_write_text
from .config import TrainConfig
from .optim import BinaryAdam, build_optimizer
from .schedule import lr_schedule

METRICS_HEADER = "# ebnet-metrics v1"
METRICS_COLUMNS = ("epoch", "lr", "train_loss", "val_top1", "val_top5")


class LossHook(Protocol):
    """Extra loss term added to the task loss of every training batch."""

    def __call__(
        self, model: nn.Module, inputs: torch.Tensor, logits: torch.Tensor, labels: torch.Tensor
    ) -> torch.Tensor: ...


@attrs.frozen
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_top1: float
    val_top5: float

    def row(self) -> list[str]:
        return [str(self.epoch), repr(self.lr), repr(self.train_loss), repr(self.val_top1), repr(self.val_top5)]


@attrs.frozen
class EvalReport:
    """Accuracies in percent and, per EBConv layer, the fraction of samples routed to each expert."""

    top1: float
    top5: float
    samples: int
    utilization: dict[str, np.ndarray] = attrs.field(factory=dict)


@attrs.define
class RunMetrics:
    step: str
    epochs: list[EpochRecord] = attrs.field(factory=list)
    utilization: dict[str, list[float]] = attrs.field(factory=dict)

    @property
    def lr_trace(self) -> list[float]:
        return [r.lr for r in self.epochs]

    @property
    def final(self) -> EpochRecord | None:
        return self.epochs[-1] if self.epochs else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(METRICS_HEADER + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for record in self.epochs:
            writer.writerow(record.row())
        return buf.getvalue()

    def write_csv(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / f"metrics_{self.step}.csv"
        atomic_write_text(path, self.to_csv())
        return path

    def as_state(self) -> list[dict]:
        return [attrs.asdict(r) for r in self.epochs]


def read_metrics_csv(path: str | Path) -> list[EpochRecord]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise FormatError(f"missing {METRICS_HEADER!r} header", path=path, offset=0)
    rows = list(csv.reader(lines[1:]))
    if not rows or tuple(rows[0]) != METRICS_COLUMNS:
        raise FormatError(f"expected columns {','.join(METRICS_COLUMNS)}", path=path)
    return [
        EpochRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4])) for r in rows[1:] if r
    ]


def _device_of(model: nn.Module) -> torch.device:
    return next(model.parameters()).device


def mixup_generator(seed: int, epoch: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=[epoch, 0, 1, 0]))


def train_epoch(
    model: nn.Module,
    loader,
    optimizer: BinaryAdam,
    *,
    lr: float,
    mixup_alpha: float = 0.0,
    rng: np.random.Generator | None = None,
    loss_hook: LossHook | None = None,
    max_batches: int | None = None,
) -> float:
    """One pass over ``loader``; returns the sample-weighted mean loss."""
    model.train()
    optimizer.set_lr(lr)
    device = _device_of(model)
    total, seen = 0.0, 0
    for i, (inputs, labels) in enumerate(loader):
        if max_batches is not None and i >= max_batches:
            break
        inputs, labels = inputs.to(device), labels.to(device)
        if mixup_alpha > 0:
            if rng is None:
                raise ConfigError("mixup needs a random generator")
            mixed = mixup_apply(inputs, labels, mixup_alpha, rng)
            inputs = mixed.inputs
            logits = model(inputs)
            loss = mixed.loss(logits)
        else:
            logits = model(inputs)
            loss = F.cross_entropy(logits, labels)
        if loss_hook is not None:
            loss = loss + loss_hook(model, inputs, logits, labels)

        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        total += float(loss.detach()) * len(labels)
        seen += len(labels)
    if seen == 0:
        raise FormatError("training split is empty")
    return total / seen


@torch.no_grad()
def evaluate(model: nn.Module, loader, *, max_batches: int | None = None) -> EvalReport:
    model.eval()
    device = _device_of(model)
    layers = list(expert_convs(model))
    counts = {name: torch.zeros(conv.n_experts, dtype=torch.float64) for name, conv in layers}
    correct1 = correct5 = 0
    seen = 0
    for i, (inputs, labels) in enumerate(loader):
        if max_batches is not None and i >= max_batches:
            break
        inputs, labels = inputs.to(device), labels.to(device)
        logits = model(inputs)
        k = min(5, logits.shape[1])
        top = logits.topk(k, dim=1).indices
        hits = top == labels[:, None]
        correct1 += int(hits[:, 0].sum())
        correct5 += int(hits.any(dim=1).sum())
        seen += len(labels)
        for name, conv in layers:
            selected = conv.last_gate.selected.reshape(-1).cpu()
            counts[name] += torch.bincount(selected, minlength=conv.n_experts).to(torch.float64)
    if seen == 0:
        raise FormatError("evaluation split is empty")
    utilization = {name: (c / c.sum()).numpy() for name, c in counts.items()}
    return EvalReport(100.0 * correct1 / seen, 100.0 * correct5 / seen, seen, utilization)


def expert_utilization(model: nn.Module, loader, *, max_batches: int | None = None) -> dict[str, np.ndarray]:
    if not any(True for _ in expert_convs(model)):
        raise ConfigError("model has no expert convolution")
    return evaluate(model, loader, max_batches=max_batches).utilization


@torch.no_grad()
def recalibrate_bn(model: nn.Module, loader, max_batches: int) -> int:
    """Recompute every BN running statistic as a cumulative average over ``max_batches`` batches."""
    norms = [m for m in model.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    momenta = [m.momentum for m in norms]
    for m in norms:
        m.reset_running_stats()
        m.momentum = None
    model.train()
    device = _device_of(model)
    used = 0
    try:
        for i, (inputs, _) in enumerate(loader):
            if i >= max_batches:
                break
            model(inputs.to(device))
            used += 1
    finally:
        for m, momentum in zip(norms, momenta):
            m.momentum = momentum
        model.eval()
    logger.debug("Recalibrated {} batch norms over {} batches", len(norms), used)
    return used


def replicate_model(src: EBNet, n_experts: int, *, generator: torch.Generator | None = None) -> EBNet:
    """A copy of the single-expert ``src`` with expert 0 copied into ``n_experts`` slots.

    Every non-expert tensor is carried over; gate projections are drawn fresh.
    """
    for name, conv in expert_convs(src):
        if conv.n_experts != 1:
            raise ConfigError(f"{name} already has {conv.n_experts} experts")
    like = next(src.parameters())
    target = build_network(src.spec.replace(n_experts=n_experts)).to(device=like.device, dtype=like.dtype)
    shared = {k: v for k, v in src.state_dict().items() if ".bank." not in k}
    missing, unexpected = target.load_state_dict(shared, strict=False)
    if unexpected or any(".bank." not in k for k in missing):
        raise ConfigError(f"models disagree outside the expert banks: {unexpected or missing}")
    for name, conv in expert_convs(src):
        dst = target.get_submodule(name)
        dst.bank = copy.deepcopy(conv.bank)
        dst.bank.replicate_experts(n_experts, generator=generator)
        dst.configure(weight_mode=conv.weight_mode, activation_mode=conv.activation_mode, gate_mode=conv.gate_mode)
    logger.info("Replicated {} expert convolutions into {} experts", len(list(expert_convs(target))), n_experts)
    return target


def binarize_weights(model: nn.Module) -> None:
    """Switch to binary weights and activations; every alpha absorbs the mean |theta| of its channel."""
    for _, conv in binary_convs(model):
        conv.init_alpha_from_latent_()
    configure_binary(model, weight_mode="binary", activation_mode="binary")


def apply_stage(model: nn.Module, stage: str) -> None:
    configure_binary(model, weight_mode="real" if stage == "I" else "binary", activation_mode="binary", gate_mode="wta")


def train_stage(
    model: nn.Module,
    data: DataBundle,
    cfg: TrainConfig,
    *,
    step: str,
    out_dir: str | Path | None = None,
    loss_hook: LossHook | None = None,
    start_epoch: int = 0,
) -> RunMetrics:
    """Run ``cfg`` on ``model``: one optimizer, the lr schedule, evaluation after every epoch."""
    spec = getattr(model, "spec", None)
    if spec is not None and spec.classes != data.classes:
        raise ConfigError(f"{spec.name} predicts {spec.classes} classes, dataset has {data.classes}")
    apply_stage(model, cfg.stage)
    optimizer = build_optimizer(model, cfg)
    metrics = RunMetrics(step=step)
    report = None
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        train_loader = make_loader(
            data, split="train", batch_size=cfg.batch_size, seed=cfg.seed, epoch=epoch, workers=cfg.workers
        )
        loss = train_epoch(
            model,
            train_loader,
            optimizer,
            lr=lr,
            mixup_alpha=cfg.mixup_alpha,
            rng=mixup_generator(cfg.seed, epoch),
            loss_hook=loss_hook,
            max_batches=cfg.max_batches,
        )
        test_loader = make_loader(data, split="test", batch_size=cfg.batch_size, seed=cfg.seed, workers=cfg.workers)
        report = evaluate(model, test_loader, max_batches=cfg.max_batches)
        record = EpochRecord(epoch, lr, loss, report.top1, report.top5)
        metrics.epochs.append(record)
        logger.info(
            "{} epoch {}/{}: lr={:.3g} loss={:.4f} top1={:.2f} top5={:.2f}",
            step,
            epoch + 1,
            cfg.epochs,
            lr,
            loss,
            report.top1,
            report.top5,
        )
    if report is not None:
        metrics.utilization = {name: row.tolist() for name, row in report.utilization.items()}
    if out_dir is not None:
        metrics.write_csv(out_dir)
    return metrics
