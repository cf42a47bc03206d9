import pytest
import torch
import torch.nn as nn

from ebnet.bitcore import ConvGeometry
from ebnet.errors import ConfigError, ShapeError
from ebnet.graph import (
    ActivationMode,
    BinaryBlock,
    BinaryUnit,
    ClassifierHead,
    DownsampleBlock,
    EBConv2d,
    Stem,
    configure_binary,
    expert_convs,
    group_mix_unit,
)


def test_unit_with_zero_scale_is_identity():
    unit = BinaryUnit(EBConv2d(ConvGeometry.square(16, 16, 3, padding=1), n_experts=2))
    with torch.no_grad():
        unit.conv.bank.alpha.zero_()
    x = torch.randn(2, 16, 8, 8)
    assert torch.equal(unit(x), x)


def test_unit_keeps_shape():
    unit = BinaryUnit(EBConv2d(ConvGeometry.square(128, 128, 3, padding=1)))
    assert unit(torch.randn(1, 128, 32, 32)).shape == (1, 128, 32, 32)


def test_unit_needs_downsample_when_shape_changes():
    with pytest.raises(ShapeError):
        BinaryUnit(EBConv2d(ConvGeometry.square(16, 32, 3, stride=2, padding=1)))


def test_strided_unit_with_downsample():
    geom = ConvGeometry.square(16, 32, 3, stride=2, padding=1)
    unit = BinaryUnit(EBConv2d(geom), DownsampleBlock(16, 32, stride=2, variant="prelu", reduction=4))
    assert unit(torch.randn(2, 16, 7, 7)).shape == (2, 32, 4, 4)


def test_gradient_reaches_input_through_skip():
    unit = BinaryUnit(EBConv2d(ConvGeometry.square(4, 4, 3, padding=1))).double()
    unit.conv.configure(activation_mode=ActivationMode.SURROGATE)
    with torch.no_grad():
        unit.conv.bank.alpha.zero_()
    x = torch.randn(3, 4, 5, 5, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(unit, (x,), eps=1e-6, atol=1e-6, rtol=1e-4)
    unit(x).sum().backward()
    assert torch.allclose(x.grad, torch.ones_like(x))


def _grouped_block(mix: bool) -> BinaryBlock:
    torch.manual_seed(0)
    units = [BinaryUnit(EBConv2d(ConvGeometry.square(8, 8, 1, groups=4))) for _ in range(2)]
    block = BinaryBlock(units, group_mix_unit(8) if mix else None)
    block.eval()
    return block


@pytest.mark.parametrize("mix", [True, False])
def test_group_mix_carries_information_across_groups(mix):
    block = _grouped_block(mix)
    x = torch.randn(4, 8, 3, 3)
    perturbed = x.clone()
    perturbed[:, 7] = -perturbed[:, 7]
    with torch.no_grad():
        first = block(x)[:, 0]
        second = block(perturbed)[:, 0]
    assert (not torch.equal(first, second)) == mix


def test_block_iterates_units_in_order():
    units = [BinaryUnit(EBConv2d(ConvGeometry.square(4, 4, 1))) for _ in range(3)]
    block = BinaryBlock(units)
    assert list(block.units()) == units
    assert [name for name, _ in expert_convs(block)] == ["unit0.conv", "unit1.conv", "unit2.conv"]


def test_downsample_halves_resolution():
    down = DownsampleBlock(64, 128, stride=2, variant="vanilla")
    assert down(torch.randn(1, 64, 56, 56)).shape == (1, 128, 28, 28)


@pytest.mark.parametrize("variant", ["linear", "relu", "prelu"])
def test_downsample_bottleneck_width(variant):
    down = DownsampleBlock(64, 128, stride=1, variant=variant, reduction=4)
    assert down.reduce.out_channels == 16
    assert down.expand.in_channels == 16
    assert down(torch.randn(2, 64, 5, 5)).shape == (2, 128, 5, 5)


def test_downsample_without_reduction_stacks_same_width():
    down = DownsampleBlock(32, 64, variant="prelu", reduction=1)
    assert down.reduce.in_channels == down.reduce.out_channels == 32


def test_downsample_rejects_indivisible_reduction():
    with pytest.raises(ConfigError):
        DownsampleBlock(30, 60, variant="prelu", reduction=4)
    with pytest.raises(ConfigError):
        DownsampleBlock(32, 64, variant="gelu")


def test_prelu_with_unit_slope_is_identity():
    act = nn.PReLU(3, init=1.0)
    x = torch.randn(2, 3, 4, 4)
    assert torch.equal(act(x), x)


def test_batchnorm_of_constant_channel_is_zero():
    bn = nn.BatchNorm2d(2)
    x = torch.full((4, 2, 3, 3), 5.0)
    assert torch.equal(bn(x), torch.zeros_like(x))


@pytest.mark.parametrize(
    "module",
    [
        lambda: nn.BatchNorm2d(3),
        lambda: nn.PReLU(3, init=0.3),
        lambda: nn.AvgPool2d(2, ceil_mode=True, count_include_pad=False),
        lambda: nn.AdaptiveAvgPool2d(1),
        lambda: ClassifierHead(3, 5),
    ],
)
def test_real_layers_match_finite_differences(module):
    layer = module().double()
    x = torch.randn(4, 3, 5, 5, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(layer, (x,), eps=1e-6, atol=1e-6, rtol=1e-4)


@pytest.mark.parametrize(("kind", "hw", "expected"), [("imagenet7x7", 224, 56), ("cifar3x3", 32, 32)])
def test_stem_output(kind, hw, expected):
    stem = Stem(kind, 3, 64)
    assert stem(torch.randn(1, 3, hw, hw)).shape == (1, 64, expected, expected)


def test_stem_rejects_unknown_kind():
    with pytest.raises(ConfigError):
        Stem("resnet", 3, 64)


def test_configure_binary_reaches_all_convs():
    block = _grouped_block(mix=True)
    configure_binary(block, weight_mode="binary", use_packed=True)
    for module in block.modules():
        if hasattr(module, "use_packed"):
            assert module.use_packed
            assert module.weight_mode == "binary"
