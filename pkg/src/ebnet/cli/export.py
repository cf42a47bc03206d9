"""Packed inference export (``EBX1``).

Latent weights of every binary convolution are reduced to their signs and
stored as packed bit planes; all other tensors are stored as real32. The
reloaded network forwards through the packed kernels.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import attrs
import numpy as np
from loguru import logger

from ..arch import EBNet, build_network, cost_model
from ..checkpoint import (
    EXPORT_MAGIC,
    Checkpoint,
    PackedRecord,
    Record,
    encode_checkpoint,
    load_checkpoint,
    load_state_records,
    state_records,
)
from ..errors import ConfigError
from ..graph import EBConv2d, binary_convs, configure_binary
from ..io import atomic_write_bytes
from ..trainer import apply_stage, binarize_weights, load_model

MODEL_PREFIX = "model."


@attrs.frozen
class ExportSummary:
    path: Path
    file_bytes: int
    packed_payload_bytes: int
    real_payload_bytes: int
    expected_bytes: int

    @property
    def size_ratio(self) -> float:
        """File size over the cost model's estimate."""
        return self.file_bytes / self.expected_bytes

    def to_text(self) -> str:
        return (
            f"path={self.path}\n"
            f"file_bytes={self.file_bytes}\n"
            f"packed_payload_bytes={self.packed_payload_bytes}\n"
            f"real_payload_bytes={self.real_payload_bytes}\n"
            f"expected_bytes={self.expected_bytes}\n"
            f"size_ratio={self.size_ratio:.4f}\n"
        )


def binary_weight_names(model: EBNet, prefix: str = MODEL_PREFIX) -> set[str]:
    """Record names of the latent weights of every binary convolution."""
    out = set()
    for name, conv in binary_convs(model):
        leaf = "bank.theta" if isinstance(conv, EBConv2d) else "theta"
        out.add(f"{prefix}{name}.{leaf}")
    return out


def export_records(model: EBNet, *, pack: bool = True) -> dict[str, Record]:
    binary = binary_weight_names(model)
    records: dict[str, Record] = {}
    for name, value in state_records(model, prefix=MODEL_PREFIX).items():
        if name in binary:
            signs = np.where(value >= 0, 1.0, -1.0).astype(np.float32)
            records[name] = PackedRecord.from_array(signs) if pack else signs
        else:
            records[name] = value.astype(np.float32)
    return records


def export_model(path: str | Path, model: EBNet, *, pack: bool = True) -> ExportSummary:
    """Write ``model`` (already in binary-weights mode) as an ``EBX1`` file."""
    if any(conv.weight_mode != "binary" for _, conv in binary_convs(model)):
        raise ConfigError("only networks with binary weights can be exported")
    records = export_records(model, pack=pack)
    payload = encode_checkpoint(
        Checkpoint(arch=model.spec, records=records, meta={"packed": pack}, magic=EXPORT_MAGIC)
    )
    atomic_write_bytes(path, payload)
    packed = sum(r.payload_nbytes for r in records.values() if isinstance(r, PackedRecord))
    real = sum(r.nbytes for r in records.values() if isinstance(r, np.ndarray))
    summary = ExportSummary(Path(path), len(payload), packed, real, cost_model(model.spec).model_size_bytes)
    logger.debug("Exported {} records to {}", len(records), path)
    return summary


def export_checkpoint(src: str | Path, dst: str | Path, *, pack: bool = True, force: bool = False) -> ExportSummary:
    model, meta = load_model(src)
    if meta.get("state", {}).get("weights") != "binary":
        if not force:
            raise ConfigError(f"{src} holds stage I weights; train stage II first or pass --force")
        logger.warning("{} holds stage I weights; binarizing on the fly", src)
        binarize_weights(model)
    return export_model(dst, model, pack=pack)


def is_exported(path: str | Path) -> bool:
    with open(path, "rb") as f:
        return f.read(4) == EXPORT_MAGIC


def load_exported(path: str | Path, *, use_packed: bool = True) -> EBNet:
    """Inference network of an ``EBX1`` file; binary convolutions run on packed operands."""
    ckpt = load_checkpoint(path, magic=EXPORT_MAGIC)
    model = build_network(ckpt.arch)
    load_state_records(model, ckpt.records, prefix=MODEL_PREFIX)
    apply_stage(model, "II")
    configure_binary(model, use_packed=use_packed)
    return model.eval()


def cmd_export(args: argparse.Namespace) -> int:
    summary = export_checkpoint(args.ckpt, args.out, pack=args.pack, force=args.force)
    if summary.packed_payload_bytes and abs(summary.size_ratio - 1.0) > 0.02:
        logger.warning(
            "export is {} bytes, the cost model expects {}", summary.file_bytes, summary.expected_bytes
        )
    sys.stdout.write(summary.to_text())
    return 0


def add_parser(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("export", help="Write a packed inference file from a stage II checkpoint.")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--pack", action=argparse.BooleanOptionalAction, default=True, help="Store binary weights as bit planes.")
    p.add_argument("--force", action="store_true", help="Binarize a stage I checkpoint instead of refusing it.")
    p.set_defaults(handler=cmd_export)
