"""
PseudoLab - consistent pseudo-labelling toolkit for semi-supervised detection

Label assignment, pyramid feature alignment, GMM pseudo-label thresholds,
COCO-style evaluation and a seeded mean-teacher simulator.
"""

from .config import Settings, get_settings
from .errors import DegenerateError, DomainError, PseudoLabError, UndefinedMetricError

__version__ = "0.1.0"
__all__ = [
    "Settings",
    "get_settings",
    "PseudoLabError",
    "DomainError",
    "DegenerateError",
    "UndefinedMetricError",
]
