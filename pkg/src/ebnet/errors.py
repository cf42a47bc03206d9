"""Exception hierarchy shared by every ebnet sub-package.

Each error also derives from the builtin a caller would naturally catch, so
``except ValueError`` keeps working around shape and config problems.
"""

from __future__ import annotations

from pathlib import Path


class EbnetError(Exception):
    """Root of all ebnet errors."""


class ShapeError(EbnetError, ValueError):
    """Invalid, empty or mismatched tensor shape."""


class GeometryError(ShapeError):
    """Convolution geometry inconsistent with its operands."""


class BitRangeError(EbnetError, IndexError):
    """Bit index or bit count outside the packed capacity."""


class ConfigError(EbnetError, ValueError):
    """A configuration or architecture invariant is violated."""


class ArchParseError(ConfigError):
    def __init__(self, message: str, *, text: str, position: int) -> None:
        self.text = text
        self.position = position
        pointer = " " * position + "^"
        super().__init__(f"{message} at position {position}\n  {text}\n  {pointer}")


class FormatError(EbnetError, ValueError):
    """A data or checkpoint file does not follow its format definition."""

    def __init__(self, message: str, *, path: str | Path | None = None, offset: int | None = None) -> None:
        self.path = None if path is None else Path(path)
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class CheckpointVersionError(FormatError):
    """Checkpoint magic, version or architecture does not match what the caller expects."""


class NonFiniteGradientError(EbnetError, FloatingPointError):
    def __init__(self, param_name: str, n_bad: int) -> None:
        self.param_name = param_name
        self.n_bad = n_bad
        super().__init__(
            f"Non-finite gradient in parameter {param_name!r} ({n_bad} bad entries); "
            "aborting the optimizer step"
        )


class InfeasibleBudgetError(EbnetError):
    """No architecture candidate satisfies the requested budget."""
