from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import IO, Any, Callable


def _replace_via_temp(path: Path, writer: Callable[[IO[Any]], None], *, binary: bool) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
    tmp_path = Path(tmp_name)
    try:
        if binary:
            stream = os.fdopen(fd, "wb")
        else:
            stream = os.fdopen(fd, "w", encoding="utf-8", newline="")
        with stream as f:
            writer(f)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if tmp_path.exists():
            tmp_path.unlink()
        raise


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    """Write ``payload`` so readers see either the old file or the complete new one."""
    _replace_via_temp(Path(path), lambda f: f.write(payload), binary=True)


def atomic_write_text(path: str | Path, payload: str) -> None:
    _replace_via_temp(Path(path), lambda f: f.write(payload), binary=False)


def atomic_write_via(path: str | Path, writer: Callable[[IO[Any]], None], *, binary: bool) -> None:
    _replace_via_temp(Path(path), writer, binary=binary)
