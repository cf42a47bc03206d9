from __future__ import annotations

import os
import sys
import warnings
from pathlib import Path
from typing import Literal

from loguru import logger
from pydantic import validate_call

LogLevel = Literal["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR"]

_TIME_SEC = "<green>{time:MM-DD HH:mm:ss}</green>"
_LVL_SEC = "<lvl><b>{level: <7}</b></lvl>"
_LOC_SEC = "<lvl><n>{name}:{function}:{line}</n></lvl>"
_THD_SEC = "{thread.name}"
_MSG_SEC = "<lvl><n>{message}</n></lvl>"

TRAIN_LOG_FILE = "train.log.jsonl"

# Initialization is tracked per PID so that DataLoader workers started with
# either fork or spawn configure their own sinks exactly once.
_initialized_pids: dict[int, bool] = {}


def is_initialized() -> bool:
    return _initialized_pids.get(os.getpid(), False)


class LoguruInitializer:
    """Fluent builder for the process-wide loguru configuration.

    ```python
    LoguruInitializer().preset_brief().set_level("DEBUG").initialize()
    ```
    """

    BRIEF_SECTIONS = (_TIME_SEC, _LVL_SEC, _MSG_SEC)
    FULL_SECTIONS = (_TIME_SEC, _LVL_SEC, _LOC_SEC, _THD_SEC, _MSG_SEC)

    def __init__(self) -> None:
        self._sections: list[str] = list(self.BRIEF_SECTIONS)
        self._level: LogLevel | int = "INFO"
        self._enqueue = False
        self._file_sink: dict | None = None

    def preset_brief(self) -> "LoguruInitializer":
        self._sections = list(self.BRIEF_SECTIONS)
        self._level = "INFO"
        return self

    def preset_full(self) -> "LoguruInitializer":
        self._sections = list(self.FULL_SECTIONS)
        self._level = "DEBUG"
        return self

    def preset_training(self, run_dir: str | Path) -> "LoguruInitializer":
        """Brief console output plus a JSON-lines record of the run in ``run_dir``."""
        self.preset_brief()
        return self.serialize_to_file(Path(run_dir) / TRAIN_LOG_FILE, level="DEBUG")

    @validate_call
    def set_level(self, level: LogLevel | int) -> "LoguruInitializer":
        self._level = level
        return self

    @validate_call
    def set_enqueue(self, enqueue: bool = True) -> "LoguruInitializer":
        self._enqueue = enqueue
        return self

    def serialize_to_file(
        self,
        file_path: str | Path,
        level: LogLevel | int = "DEBUG",
        *,
        rotation: str | None = None,
        retention: str | None = None,
    ) -> "LoguruInitializer":
        self._file_sink = dict(
            sink=str(file_path),
            level=level,
            colorize=False,
            serialize=True,
            rotation=rotation,
            retention=retention,
        )
        return self

    @validate_call
    def initialize(
        self,
        on_reinitialize: Literal["overwrite", "warn", "abort", "ignore"] = "warn",
    ) -> None:
        pid = os.getpid()
        if _initialized_pids.get(pid, False):
            if on_reinitialize == "abort":
                raise RuntimeError("Loguru has already been initialized in this process")
            if on_reinitialize == "ignore":
                return None
            if on_reinitialize == "warn":
                warnings.warn(
                    "Loguru has already been initialized in this process; "
                    "the previous sinks are replaced",
                    UserWarning,
                )

        fmt = "|".join(self._sections)
        logger.remove()
        logger.add(sys.stderr, colorize=True, level=self._level, enqueue=self._enqueue, format=fmt)
        if self._file_sink is not None:
            Path(self._file_sink["sink"]).parent.mkdir(parents=True, exist_ok=True)
            logger.add(**self._file_sink, enqueue=self._enqueue, format=fmt)

        logger.level("INFO", color="")
        logger.level("DEBUG", color="<fg #9fcce0>")
        logger.level("TRACE", color="<light-black>")

        _initialized_pids[pid] = True
        return None
