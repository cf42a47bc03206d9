from __future__ import annotations

import os
from functools import lru_cache

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..errors import ConfigError

THREADS_ENV_VAR = "EBNET_THREADS"


class RuntimeSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    threads: int = Field(
        default=1,
        ge=1,
        description="Upper bound on worker threads used by the packed kernels and torch intra-op parallelism.",
    )

    @classmethod
    def from_env(cls) -> "RuntimeSettings":
        raw = os.getenv(THREADS_ENV_VAR)
        if raw is None or raw.strip() == "":
            return cls()
        try:
            return cls(threads=int(raw))
        except (ValueError, ValidationError) as exc:
            raise ConfigError(f"{THREADS_ENV_VAR} must be a positive integer, got {raw!r}") from exc

    def apply(self) -> None:
        import torch

        torch.set_num_threads(self.threads)
        logger.debug("torch intra-op threads set to {}", self.threads)


@lru_cache(maxsize=1)
def _cached_env_threads(raw: str | None) -> int:
    return RuntimeSettings.from_env().threads


def thread_budget() -> int:
    """Thread cap from ``EBNET_THREADS``, re-read whenever the variable changes."""
    return _cached_env_threads(os.getenv(THREADS_ENV_VAR))
