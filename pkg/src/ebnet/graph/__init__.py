from .ebconv import (
    ActivationMode,
    BinaryConv2d,
    EBConv2d,
    ExpertBank,
    ExpertConvCache,
    ExpertConvFunction,
    ExpertGrads,
    GateMode,
    WeightMode,
    ebconv_backward,
    ebconv_forward,
)
from .gating import GateState, aggregate_psi, gate_backward, gate_forward
from .layers import (
    BinaryBlock,
    BinaryUnit,
    ClassifierHead,
    DownsampleBlock,
    DownsampleVariant,
    Stem,
    StemKind,
    binary_convs,
    clamp_latent_weights,
    configure_binary,
    expert_convs,
    group_mix_unit,
)
from .mixup import MixedBatch, mixup_apply, sample_mixup_lambda
from .nodes import LayerKind, LayerNode
from .ste import pack_weights, sign_ste, weight_binarize_ste

__all__ = [
    "ActivationMode",
    "BinaryConv2d",
    "EBConv2d",
    "ExpertBank",
    "ExpertConvCache",
    "ExpertConvFunction",
    "ExpertGrads",
    "GateMode",
    "WeightMode",
    "ebconv_backward",
    "ebconv_forward",
    "GateState",
    "aggregate_psi",
    "gate_backward",
    "gate_forward",
    "BinaryBlock",
    "BinaryUnit",
    "ClassifierHead",
    "DownsampleBlock",
    "DownsampleVariant",
    "Stem",
    "StemKind",
    "binary_convs",
    "clamp_latent_weights",
    "configure_binary",
    "expert_convs",
    "group_mix_unit",
    "MixedBatch",
    "mixup_apply",
    "sample_mixup_lambda",
    "LayerKind",
    "LayerNode",
    "pack_weights",
    "sign_ste",
    "weight_binarize_ste",
]
