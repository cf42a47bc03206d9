import pytest
from hypothesis import given
from hypothesis import strategies as st

from ebnet.arch import ArchSpec, format_arch, parse_arch
from ebnet.errors import ArchParseError, ConfigError


def test_parse_final_architecture():
    spec = parse_arch("1262-2-4:8:8:16")
    assert spec.blocks == (1, 2, 6, 2)
    assert spec.expansion == 2
    assert spec.groups == (4, 8, 8, 16)
    assert spec.stage_widths == (128, 256, 512, 1024)
    assert spec.mix_enabled
    assert spec.resolved_downsample == "prelu"
    assert spec.reduction == 4


def test_parse_baseline():
    spec = parse_arch("2222-1-1:1:1:1")
    assert spec.blocks == (2, 2, 2, 2)
    assert spec.stage_widths == (64, 128, 256, 512)
    assert not spec.mix_enabled
    assert spec.resolved_downsample == "vanilla"


def test_parse_options_fill_other_fields():
    spec = parse_arch("2222-1-4:4:4:4", n_experts=4, stem="cifar3x3", classes=10, input_resolution=32)
    assert spec.n_experts == 4
    assert spec.stem == "cifar3x3"
    assert spec.classes == 10


@pytest.mark.parametrize(
    ("text", "position"),
    [
        ("12-2-4:4", 2),
        ("9x-bad", 1),
        ("1262-2-4:8:8", 12),
        ("1262-2-4:8:8:16x", 15),
        ("1262--4:8:8:16", 5),
        ("0262-2-4:8:8:16", 0),
        ("", 0),
    ],
)
def test_parse_errors_report_position(text, position):
    with pytest.raises(ArchParseError) as info:
        parse_arch(text)
    assert info.value.position == position
    assert f"position {position}" in str(info.value)


def test_divisibility_violation_is_config_error():
    with pytest.raises(ConfigError) as info:
        parse_arch("2222-1-3:1:1:1")
    assert not isinstance(info.value, ArchParseError)


def test_zero_expansion_is_config_error():
    with pytest.raises(ConfigError):
        parse_arch("2222-0-1:1:1:1")


def test_explicit_group_mix_overrides_auto():
    assert not parse_arch("1262-2-4:8:8:16", group_mix=False).mix_enabled
    assert parse_arch("2222-1-1:1:1:1", group_mix=True).mix_enabled


def test_group_mix_default_is_documented_as_auto():
    assert ArchSpec.model_fields["group_mix"].default is None
    assert "auto" in ArchSpec.model_fields["group_mix"].description
    assert ArchSpec(blocks=(2, 2, 2, 2), groups=(1, 1, 2, 2)).mix_enabled
    assert not ArchSpec(blocks=(2, 2, 2, 2)).mix_enabled


def test_replace_revalidates():
    spec = parse_arch("2222-1-1:1:1:1")
    assert spec.replace(expansion=2).stage_widths == (128, 256, 512, 1024)
    with pytest.raises(ValueError):
        spec.replace(groups=(3, 1, 1, 1))


@given(
    blocks=st.tuples(*[st.integers(1, 9)] * 4),
    expansion=st.sampled_from([1, 2, 4]),
    groups=st.tuples(*[st.sampled_from([1, 2, 4, 8, 16, 32, 64])] * 4),
)
def test_format_parse_round_trip(blocks, expansion, groups):
    spec = ArchSpec(blocks=blocks, expansion=expansion, groups=groups)
    text = format_arch(spec)
    assert parse_arch(text) == spec
    assert spec.name == text
