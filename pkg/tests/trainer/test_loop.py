import math

import numpy as np
import pytest
import torch
import torch.nn as nn

from ebnet.arch import build_network
from ebnet.data import make_loader
from ebnet.errors import ConfigError, FormatError
from ebnet.graph import binary_convs, expert_convs
from ebnet.trainer import (
    METRICS_HEADER,
    EpochRecord,
    RunMetrics,
    TrainConfig,
    binarize_weights,
    evaluate,
    expert_utilization,
    lr_trace,
    read_metrics_csv,
    recalibrate_bn,
    replicate_model,
    train_stage,
)


class ConstantClassifier(nn.Module):
    def __init__(self, logits: list[float]) -> None:
        super().__init__()
        self.logits = nn.Parameter(torch.tensor(logits))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.logits.expand(x.shape[0], -1)


def _batches(labels: list[int], batch: int = 4):
    y = torch.tensor(labels)
    return [(torch.zeros(len(chunk), 3, 2, 2), chunk) for chunk in y.split(batch)]


def test_perfect_one_class_model():
    report = evaluate(ConstantClassifier([5.0, 0.0, 0.0]), _batches([0] * 10))
    assert report.top1 == 100.0
    assert report.top5 == 100.0
    assert report.samples == 10
    assert report.utilization == {}


def test_top5_bounds_top1():
    model = ConstantClassifier([float(v) for v in range(10)])
    report = evaluate(model, _batches(list(range(10)) * 3))
    assert report.top1 == pytest.approx(10.0)
    assert report.top5 == pytest.approx(50.0)


def test_empty_split_is_an_error():
    with pytest.raises(FormatError):
        evaluate(ConstantClassifier([0.0, 1.0]), [])


def test_single_expert_utilization(tiny_arch, tiny_bundle):
    torch.manual_seed(0)
    model = build_network(tiny_arch.replace(n_experts=1))
    loader = make_loader(tiny_bundle, split="test", batch_size=8, seed=0)
    hist = expert_utilization(model, loader)
    assert len(hist) == len(list(expert_convs(model)))
    for row in hist.values():
        assert row.tolist() == [1.0]


def test_utilization_rows_sum_to_one(tiny_arch, tiny_bundle):
    torch.manual_seed(1)
    model = build_network(tiny_arch.replace(n_experts=4))
    hist = expert_utilization(model, make_loader(tiny_bundle, split="test", batch_size=8, seed=0))
    for row in hist.values():
        assert row.shape == (4,)
        assert abs(row.sum() - 1.0) < 1e-9
        assert (row >= 0).all()


def test_recalibrated_statistics_are_batch_averages():
    norm = nn.BatchNorm2d(3)
    norm.running_mean.fill_(7.0)
    x = torch.randn(8, 3, 4, 4) + 2.0
    used = recalibrate_bn(norm, [(x, torch.zeros(8))] * 3, max_batches=2)
    assert used == 2
    torch.testing.assert_close(norm.running_mean, x.mean(dim=(0, 2, 3)))
    assert norm.momentum == 0.1
    assert not norm.training


def test_replication_preserves_outputs(tiny_arch):
    torch.manual_seed(2)
    src = build_network(tiny_arch.replace(n_experts=1)).eval()
    rep = replicate_model(src, 4, generator=torch.Generator().manual_seed(0)).eval()
    assert rep.spec.n_experts == 4
    x = torch.randn(6, 3, 8, 8)
    with torch.no_grad():
        expected = src(x)
        assert torch.equal(rep(x), expected)
        for _, conv in expert_convs(rep):
            conv.bank.omega.add_(torch.randn_like(conv.bank.omega))
        assert torch.equal(rep(x), expected)


def test_binarize_weights_scales_alpha(tiny_arch):
    torch.manual_seed(3)
    model = build_network(tiny_arch)
    before = {name: conv.bank.alpha.detach().clone() for name, conv in expert_convs(model)}
    binarize_weights(model)
    for name, conv in binary_convs(model):
        assert conv.weight_mode == "binary"
    for name, conv in expert_convs(model):
        expected = before[name] * conv.bank.theta.detach().abs().mean(dim=(2, 3, 4))
        torch.testing.assert_close(conv.bank.alpha.detach(), expected)


def test_metrics_csv(tmp_path):
    metrics = RunMetrics(step="step1", epochs=[EpochRecord(0, 1e-4, 0.693, 50.0, 100.0), EpochRecord(1, 1e-3, 0.5, 75.0, 100.0)])
    path = metrics.write_csv(tmp_path)
    assert path.name == "metrics_step1.csv"
    lines = path.read_text().splitlines()
    assert lines[0] == METRICS_HEADER
    assert lines[1] == "epoch,lr,train_loss,val_top1,val_top5"
    assert read_metrics_csv(path) == metrics.epochs
    assert metrics.lr_trace == [1e-4, 1e-3]


def test_metrics_csv_rejects_foreign_files(tmp_path):
    path = tmp_path / "metrics_x.csv"
    path.write_text("epoch,lr\n")
    with pytest.raises(FormatError):
        read_metrics_csv(path)


def _stage_cfg(**changes) -> TrainConfig:
    values = dict(epochs=2, milestones=[1], warmup_epochs=1, batch_size=16, max_batches=2, mixup_alpha=0.2)
    values.update(changes)
    return TrainConfig(**values)


def test_train_stage_writes_metrics(tiny_arch, tiny_bundle, tmp_path):
    torch.manual_seed(4)
    model = build_network(tiny_arch)
    cfg = _stage_cfg()
    metrics = train_stage(model, tiny_bundle, cfg, step="step3", out_dir=tmp_path)
    assert [r.epoch for r in metrics.epochs] == [0, 1]
    assert metrics.lr_trace == lr_trace(cfg)
    assert all(math.isfinite(r.train_loss) for r in metrics.epochs)
    assert all(r.val_top5 >= r.val_top1 for r in metrics.epochs)
    assert set(metrics.utilization) == {name for name, _ in expert_convs(model)}
    assert read_metrics_csv(tmp_path / "metrics_step3.csv") == metrics.epochs


def test_first_epoch_is_deterministic(tiny_arch, tiny_bundle):
    losses = []
    for _ in range(2):
        torch.manual_seed(5)
        model = build_network(tiny_arch)
        metrics = train_stage(model, tiny_bundle, _stage_cfg(epochs=1, milestones=[]), step="step1")
        losses.append(metrics.epochs[0])
    assert losses[0] == losses[1]


def test_class_count_mismatch(tiny_arch, tiny_bundle):
    model = build_network(tiny_arch.replace(classes=10))
    with pytest.raises(ConfigError):
        train_stage(model, tiny_bundle, _stage_cfg(), step="step1")


def test_stage2_training_keeps_weights_binary(tiny_arch, tiny_bundle):
    torch.manual_seed(6)
    model = build_network(tiny_arch)
    binarize_weights(model)
    train_stage(model, tiny_bundle, _stage_cfg(stage="II", weight_decay=0.0), step="step4")
    for _, conv in binary_convs(model):
        assert conv.weight_mode == "binary"
        assert float(conv._latent().detach().abs().max()) <= 1.0
    assert np.isfinite([p.detach().sum().item() for p in model.parameters()]).all()
