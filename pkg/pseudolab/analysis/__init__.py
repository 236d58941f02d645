"""PseudoLab Analysis - assignment, alignment, losses, thresholds and metrics"""

from .assign import AssignmentResult, AssignState, Scene, assign_asa, assign_atss, assign_iou, make_assigner
from .evaluation import EvalResult, inconsistency, map_50_95
from .gmm import GmmFit, ScoreBank, adaptive_threshold, em_fit
from .pyramid import FeaturePyramid, OffsetField, PyramidSpec, fam3d, generate_anchors

__all__ = [
    "AssignmentResult",
    "AssignState",
    "Scene",
    "assign_asa",
    "assign_atss",
    "assign_iou",
    "make_assigner",
    "EvalResult",
    "inconsistency",
    "map_50_95",
    "GmmFit",
    "ScoreBank",
    "adaptive_threshold",
    "em_fit",
    "FeaturePyramid",
    "OffsetField",
    "PyramidSpec",
    "fam3d",
    "generate_anchors",
]
