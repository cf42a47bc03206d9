import math

import numpy as np
import pytest
import torch

from ebnet.arch import ArchSpec, build_network, cost_model
from ebnet.checkpoint import EXPORT_MAGIC, PackedRecord, load_checkpoint
from ebnet.cli import EXIT_OK, EXIT_USAGE, export_checkpoint, export_model, is_exported, load_exported, main
from ebnet.cli.export import binary_weight_names, export_records
from ebnet.errors import CheckpointVersionError, ConfigError
from ebnet.graph import binary_convs
from ebnet.trainer import binarize_weights, save_model


def _arch(**changes) -> ArchSpec:
    values = dict(
        blocks=(1, 1, 1, 1),
        base_width=8,
        n_experts=2,
        stem="cifar3x3",
        input_resolution=8,
        classes=4,
        groups=(1, 2, 2, 1),
    )
    values.update(changes)
    return ArchSpec(**values)


def _stage2_model(spec: ArchSpec, seed: int = 0):
    torch.manual_seed(seed)
    model = build_network(spec)
    binarize_weights(model)
    # non-trivial BN statistics and gates
    model.train()
    with torch.no_grad():
        model(torch.randn(16, spec.in_channels, spec.input_resolution, spec.input_resolution))
    return model.eval()


def test_packed_reload_matches_forward(tmp_path):
    spec = _arch()
    model = _stage2_model(spec)
    save_model(tmp_path / "final.ckpt", model, step="step4")
    export_checkpoint(tmp_path / "final.ckpt", tmp_path / "final.ebx")
    assert is_exported(tmp_path / "final.ebx")
    assert not is_exported(tmp_path / "final.ckpt")

    reloaded = load_exported(tmp_path / "final.ebx")
    assert all(conv.use_packed for _, conv in binary_convs(reloaded))
    x = torch.randn(32, 3, 8, 8)
    with torch.no_grad():
        assert torch.equal(reloaded(x), model(x))


def test_unpacked_export_matches_too(tmp_path):
    model = _stage2_model(_arch(), seed=1)
    export_model(tmp_path / "plain.ebx", model, pack=False)
    reloaded = load_exported(tmp_path / "plain.ebx", use_packed=False)
    x = torch.randn(8, 3, 8, 8)
    with torch.no_grad():
        assert torch.equal(reloaded(x), model(x))


def test_binary_records_are_packed_and_counted(tmp_path):
    spec = _arch()
    model = _stage2_model(spec)
    records = export_records(model)
    binary = binary_weight_names(model)
    assert binary and binary <= set(records)
    report = cost_model(spec)
    packed_bits = 0
    real_values = 0
    for name, record in records.items():
        if name in binary:
            assert isinstance(record, PackedRecord)
            n = math.prod(record.shape)
            packed_bits += n
            # one row of 64-bit words against 4 bytes per value
            assert record.payload_nbytes == 8 * math.ceil(n / 64)
            assert record.payload_nbytes <= 4 * n / 32 + 8
        else:
            assert record.dtype == np.float32
            real_values += record.size
    assert packed_bits == report.binary_param_bits
    assert real_values == report.real_param_count


def test_file_size_follows_the_cost_model(tmp_path):
    spec = ArchSpec(blocks=(1, 1, 1, 1), stem="cifar3x3", input_resolution=32, classes=10)
    torch.manual_seed(0)
    model = build_network(spec)
    binarize_weights(model)
    summary = export_model(tmp_path / "resnet.ebx", model)
    assert summary.file_bytes == (tmp_path / "resnet.ebx").stat().st_size
    assert summary.expected_bytes == cost_model(spec).model_size_bytes
    assert abs(summary.size_ratio - 1.0) < 0.02

    plain = export_model(tmp_path / "resnet_plain.ebx", model, pack=False)
    assert plain.packed_payload_bytes == 0
    assert plain.file_bytes > 4 * summary.file_bytes


def test_stage1_checkpoints_need_force(tmp_path):
    torch.manual_seed(0)
    save_model(tmp_path / "stage1.ckpt", build_network(_arch()), step="step3")
    with pytest.raises(ConfigError):
        export_checkpoint(tmp_path / "stage1.ckpt", tmp_path / "out.ebx")
    assert not (tmp_path / "out.ebx").exists()
    summary = export_checkpoint(tmp_path / "stage1.ckpt", tmp_path / "out.ebx", force=True)
    assert summary.packed_payload_bytes > 0
    assert load_checkpoint(tmp_path / "out.ebx", magic=EXPORT_MAGIC).meta == {"packed": True}


def test_export_is_not_a_training_checkpoint(tmp_path):
    export_model(tmp_path / "m.ebx", _stage2_model(_arch()))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(tmp_path / "m.ebx")


def test_export_command(tmp_path, capsys):
    torch.manual_seed(0)
    save_model(tmp_path / "stage1.ckpt", build_network(_arch()), step="step3")
    argv = ["export", "--ckpt", str(tmp_path / "stage1.ckpt"), "--out", str(tmp_path / "m.ebx")]
    assert main(argv) == EXIT_USAGE
    assert main(argv + ["--force", "--no-pack"]) == EXIT_OK
    report = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines() if "=" in line)
    assert int(report["packed_payload_bytes"]) == 0
    assert int(report["file_bytes"]) == (tmp_path / "m.ebx").stat().st_size
