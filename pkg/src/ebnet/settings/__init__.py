from .core import YamlSettings
from .runtime import THREADS_ENV_VAR, RuntimeSettings, thread_budget

__all__ = [
    "YamlSettings",
    "RuntimeSettings",
    "THREADS_ENV_VAR",
    "thread_budget",
]
