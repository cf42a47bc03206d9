from loguru import logger

from .configure_loguru import TRAIN_LOG_FILE, LoguruInitializer, is_initialized

__all__ = ["LoguruInitializer", "TRAIN_LOG_FILE", "is_initialized", "logger"]
