from __future__ import annotations

import os
import re
from collections.abc import Collection, MutableMapping, MutableSequence
from typing import Any

_PLACEHOLDERS = (
    re.compile(r"^\$\{(\w+)\}$"),
    re.compile(r"^\$(\w+)$"),
)


def match_placeholder(value: str) -> str | None:
    """Return the variable name if ``value`` is exactly one ``${VAR}`` or ``$VAR`` placeholder."""
    value = value.strip()
    for pattern in _PLACEHOLDERS:
        m = pattern.match(value)
        if m:
            return m.group(1)
    return None


def substitute_env(obj: Any, *, _path: str = "#") -> Any:
    """Replace placeholder strings in a loaded YAML tree in place.

    Unset variables become the empty string. Only whole-string placeholders
    are substituted, so ``"data/$HOME"`` is left untouched.
    """
    if isinstance(obj, MutableMapping):
        for key in list(obj.keys()):
            obj[key] = substitute_env(obj[key], _path=f"{_path}.{key}")
        return obj

    if isinstance(obj, MutableSequence):
        for i in range(len(obj)):
            obj[i] = substitute_env(obj[i], _path=f"{_path}[{i}]")
        return obj

    if isinstance(obj, str):
        name = match_placeholder(obj)
        return obj if name is None else os.getenv(name, "")

    if isinstance(obj, Collection):
        raise TypeError(f"Unsupported collection type at {_path}: {type(obj)}")

    return obj
