"""
PseudoLab record types

GroundTruth / Prediction - label assignment inputs
Detection / ImageDetections / ImageAnnotations - evaluation inputs
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

from ..errors import DomainError
from .geom import BBox


@dataclass(frozen=True)
class GroundTruth:
    """A labelled (or pseudo-labelled) object: box plus class id."""
    bbox: BBox
    class_id: int

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise DomainError(f"class id must be >= 0, got {self.class_id}")

    def to_dict(self) -> Dict[str, Any]:
        return {"bbox": self.bbox.to_list(), "class": self.class_id}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "GroundTruth":
        return cls(bbox=BBox.from_list(d["bbox"]), class_id=int(d["class"]))


@dataclass(frozen=True)
class Prediction:
    """
    Dense prediction of one anchor

    Attributes:
        anchor_index: index of the anchor that produced it
        class_probs: independent per-class sigmoid probabilities
        bbox: regressed box
    """
    anchor_index: int
    class_probs: Tuple[float, ...]
    bbox: BBox

    def __post_init__(self) -> None:
        for p in self.class_probs:
            if not math.isfinite(p) or p < 0 or p > 1:
                raise DomainError(f"class probabilities must lie in [0, 1], got {p}")

    @property
    def num_classes(self) -> int:
        return len(self.class_probs)


@dataclass(frozen=True)
class Detection:
    """Post-processed detection: box, class and confidence score."""
    bbox: BBox
    class_id: int
    score: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.score) or self.score < 0 or self.score > 1:
            raise DomainError(f"detection score must lie in [0, 1], got {self.score}")

    def to_dict(self) -> Dict[str, Any]:
        return {"bbox": self.bbox.to_list(), "class": self.class_id, "score": self.score}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Detection":
        return cls(bbox=BBox.from_list(d["bbox"]), class_id=int(d["class"]), score=float(d["score"]))


@dataclass(frozen=True)
class ImageDetections:
    """All detections produced for one image."""
    image_id: int
    detections: Tuple[Detection, ...] = field(default_factory=tuple)

    def above(self, cutoff: float) -> "ImageDetections":
        """Keep detections with score >= cutoff."""
        return ImageDetections(self.image_id, tuple(d for d in self.detections if d.score >= cutoff))

    def as_annotations(self) -> "ImageAnnotations":
        """Promote detections to ground truth (pseudo-labels)."""
        return ImageAnnotations(self.image_id, tuple(GroundTruth(d.bbox, d.class_id) for d in self.detections))

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.image_id, "dets": [d.to_dict() for d in self.detections]}


@dataclass(frozen=True)
class ImageAnnotations:
    """Ground-truth objects of one image."""
    image_id: int
    gts: Tuple[GroundTruth, ...] = field(default_factory=tuple)

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.image_id, "gts": [g.to_dict() for g in self.gts]}
