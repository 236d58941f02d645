"""
PseudoLab runtime settings

Environment-driven knobs shared by the library and the CLI.
"""

import os
from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Internal parallelism cap, 0 = one worker per CPU
    THREADS: int = 0

    # Default global seed when --seed is not given
    SEED: int = 0

    LOG_LEVEL: str = "WARNING"

    # Significant digits written to CSV outputs
    CSV_DIGITS: int = 6

    model_config = SettingsConfigDict(env_prefix="PSEUDOLAB_", env_file=".env", extra="ignore")


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()


def worker_count(threads: int | None = None) -> int:
    """
    Resolve the number of worker threads.

    Args:
        threads: explicit cap; None reads PSEUDOLAB_THREADS

    Returns:
        a positive worker count
    """
    if threads is None:
        threads = get_settings().THREADS
    if threads <= 0:
        return os.cpu_count() or 1
    return threads
