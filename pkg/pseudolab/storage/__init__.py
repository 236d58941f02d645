"""PseudoLab Storage - experiment archive"""

from .duckdb import MetricsStore

__all__ = ["MetricsStore"]
