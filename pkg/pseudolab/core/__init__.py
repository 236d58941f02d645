"""PseudoLab Core - boxes, noise and record types"""

from .geom import BBox, NoiseModel, giou, iou, perturb
from .records import Detection, GroundTruth, ImageAnnotations, ImageDetections, Prediction

__all__ = [
    "BBox",
    "NoiseModel",
    "giou",
    "iou",
    "perturb",
    "Detection",
    "GroundTruth",
    "ImageAnnotations",
    "ImageDetections",
    "Prediction",
]
