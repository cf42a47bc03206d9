"""Architecture identifiers of the form ``N0N1N2N3-E-G0:G1:G2:G3``.

``N_i`` is the number of blocks in stage ``i`` (one digit each), ``E`` the
width expansion over the 64-channel baseline and ``G_i`` the group count of
the binary convolutions in stage ``i``. Expert count, group mixing and the
remaining knobs are not part of the string and are passed separately.
"""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ArchParseError, ConfigError

Stage4 = tuple[int, int, int, int]
DownsampleChoice = Literal["auto", "vanilla", "linear", "relu", "prelu"]
StemChoice = Literal["imagenet7x7", "cifar3x3"]

N_STAGES = 4
UNITS_PER_BLOCK = 2


class ArchSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    blocks: Stage4 = Field(description="Blocks per stage, each between 1 and 9.")
    expansion: int = Field(default=1, ge=1, description="Width expansion E over the baseline widths.")
    groups: Stage4 = Field(default=(1, 1, 1, 1), description="Group count of the binary convolutions per stage.")
    n_experts: int = Field(default=1, ge=1, description="Experts per expert binary convolution.")
    group_mix: bool | None = Field(
        default=None,
        description=(
            "Append an ungrouped 1x1 binary unit after every block. The default None (auto) enables it "
            "when any stage is grouped; pass False for the plain grouped network, which has fewer BOPs."
        ),
    )
    downsample_variant: DownsampleChoice = Field(
        default="auto", description="Shortcut block type; auto picks prelu for E > 1 and vanilla otherwise."
    )
    input_resolution: int = Field(default=224, ge=1)
    stem: StemChoice = "imagenet7x7"
    classes: int = Field(default=1000, ge=1)
    in_channels: int = Field(default=3, ge=1)
    base_width: int = Field(default=64, ge=1)
    tau: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _check_stages(self) -> "ArchSpec":
        for i, n in enumerate(self.blocks):
            if not 1 <= n <= 9:
                raise ValueError(f"stage {i} has {n} blocks; expected 1..9")
        for i, (g, width, prev) in enumerate(zip(self.groups, self.stage_widths, self.stage_inputs)):
            if g < 1:
                raise ValueError(f"stage {i} group count must be >= 1, got {g}")
            if width % g or prev % g:
                raise ValueError(
                    f"stage {i}: channels {prev}->{width} are not divisible by {g} groups"
                )
        if self.resolved_downsample != "vanilla":
            for prev in self.stage_inputs:
                if prev % self.reduction:
                    raise ValueError(
                        f"{prev} shortcut channels are not divisible by the reduction ratio {self.reduction}"
                    )
        return self

    @property
    def stage_widths(self) -> Stage4:
        w = self.base_width * self.expansion
        return (w, 2 * w, 4 * w, 8 * w)

    @property
    def stage_inputs(self) -> Stage4:
        """Input channels of the first unit of every stage; stage 0 reads the stem."""
        w = self.stage_widths
        return (self.base_width, w[0], w[1], w[2])

    @property
    def mix_enabled(self) -> bool:
        if self.group_mix is None:
            return any(g > 1 for g in self.groups)
        return self.group_mix

    @property
    def resolved_downsample(self) -> Literal["vanilla", "linear", "relu", "prelu"]:
        if self.downsample_variant == "auto":
            return "prelu" if self.expansion > 1 else "vanilla"
        return self.downsample_variant

    @property
    def reduction(self) -> int:
        return self.expansion**2 if self.expansion > 1 else 1

    @property
    def name(self) -> str:
        return format_arch(self)

    def replace(self, **changes: Any) -> "ArchSpec":
        """Validated copy with ``changes`` applied."""
        return type(self).model_validate({**self.model_dump(), **changes})


def format_arch(spec: ArchSpec) -> str:
    blocks = "".join(str(n) for n in spec.blocks)
    groups = ":".join(str(g) for g in spec.groups)
    return f"{blocks}-{spec.expansion}-{groups}"


class _Scanner:
    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0

    def fail(self, message: str, position: int | None = None) -> ArchParseError:
        return ArchParseError(message, text=self.text, position=self.pos if position is None else position)

    def digit(self) -> int:
        if self.pos >= len(self.text) or not self.text[self.pos].isdigit():
            raise self.fail("expected a digit")
        value = int(self.text[self.pos])
        self.pos += 1
        return value

    def integer(self) -> int:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if start == self.pos:
            raise self.fail("expected an integer")
        return int(self.text[start : self.pos])

    def literal(self, char: str) -> None:
        if self.pos >= len(self.text) or self.text[self.pos] != char:
            raise self.fail(f"expected {char!r}")
        self.pos += 1

    def end(self) -> None:
        if self.pos != len(self.text):
            raise self.fail("unexpected trailing characters")


def parse_arch(text: str, **options: Any) -> ArchSpec:
    """Parse ``N0N1N2N3-E-G0:G1:G2:G3``; ``options`` fill the remaining fields.

    Syntax errors raise :class:`ArchParseError` pointing at the offending
    character, invariant violations raise :class:`ConfigError`.
    """
    scan = _Scanner(text.strip())
    blocks = []
    for _ in range(N_STAGES):
        start = scan.pos
        n = scan.digit()
        if n == 0:
            raise scan.fail("block counts must be 1..9", start)
        blocks.append(n)
    scan.literal("-")
    expansion = scan.integer()
    scan.literal("-")
    groups = [scan.integer()]
    for _ in range(N_STAGES - 1):
        scan.literal(":")
        groups.append(scan.integer())
    scan.end()

    try:
        return ArchSpec(blocks=tuple(blocks), expansion=expansion, groups=tuple(groups), **options)
    except ValidationError as exc:
        raise ConfigError(f"invalid architecture {text!r}: {exc}") from exc
