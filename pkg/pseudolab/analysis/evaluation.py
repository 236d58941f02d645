"""
PseudoLab evaluation

COCO-style mAP@[.5:.95] with 101-point interpolated AP, the accumulated
1 - mAP inconsistency between teacher checkpoints, and the
confidence / IoU regression used to measure classification-regression
misalignment.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from ..config import worker_count
from ..core.geom import boxes_to_array, iou_matrix
from ..core.records import GroundTruth, ImageAnnotations, ImageDetections
from ..errors import DegenerateError, DomainError, UndefinedMetricError

logger = logging.getLogger(__name__)

IOU_THRESHOLDS: Tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)

# Previous-checkpoint detections at or above this score become GT
DEFAULT_GT_CUTOFF = 0.4


def match_greedy(
    dets: ImageDetections,
    gts: Sequence[GroundTruth],
    iou_thr: float,
) -> List[Tuple[int, Optional[int]]]:
    """
    Greedy COCO matching on one image

    Detections are visited by descending score (ties: lower index); each
    takes the unmatched same-class GT with the highest IoU >= iou_thr
    (ties: lower GT index).

    Returns:
        (det_index, gt_index or None) in visiting order
    """
    if not 0 < iou_thr <= 1:
        raise DomainError(f"IoU threshold must lie in (0, 1], got {iou_thr}")
    detections = dets.detections
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    if not gts:
        return [(i, None) for i in order]

    overlaps = iou_matrix(boxes_to_array(d.bbox for d in detections), boxes_to_array(g.bbox for g in gts))
    gt_classes = np.array([g.class_id for g in gts])
    taken = np.zeros(len(gts), dtype=bool)
    out: List[Tuple[int, Optional[int]]] = []
    for i in order:
        eligible = (~taken) & (gt_classes == detections[i].class_id) & (overlaps[i] >= iou_thr)
        if not eligible.any():
            out.append((i, None))
            continue
        j = int(np.argmax(np.where(eligible, overlaps[i], -1.0)))
        taken[j] = True
        out.append((i, j))
    return out


def average_precision(scored: Sequence[Tuple[float, bool]], n_gt: int) -> float:
    """
    101-point interpolated AP

    Args:
        scored: (score, is_true_positive) for every detection of the dataset
        n_gt: number of ground-truth objects

    Returns:
        AP in [0, 1]; with no GT it is 1 when there are no detections too, else 0
    """
    if n_gt < 0:
        raise DomainError(f"n_gt must be >= 0, got {n_gt}")
    if n_gt == 0:
        return 1.0 if not scored else 0.0
    if not scored:
        return 0.0

    scores = np.array([s for s, _ in scored], dtype=float)
    flags = np.array([tp for _, tp in scored], dtype=bool)
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]

    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


@dataclass(frozen=True)
class EvalResult:
    """
    Attributes:
        ap_per_iou_threshold: class-averaged AP at each IoU threshold
        map_50_95: mean over thresholds and classes
        per_class_ap: threshold-averaged AP of each class with GT
    """
    ap_per_iou_threshold: Dict[float, float]
    map_50_95: float
    per_class_ap: Dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "map_50_95": self.map_50_95,
            "ap_per_iou_threshold": {f"{t:.2f}": v for t, v in self.ap_per_iou_threshold.items()},
            "per_class_ap": {str(c): v for c, v in self.per_class_ap.items()},
        }


def _pair_images(
    preds: Sequence[ImageDetections],
    gts: Sequence[ImageAnnotations],
) -> List[Tuple[ImageDetections, ImageAnnotations]]:
    by_id: Dict[int, ImageAnnotations] = {}
    for ann in gts:
        if ann.image_id in by_id:
            raise DomainError(f"duplicate GT image id {ann.image_id}")
        by_id[ann.image_id] = ann
    pred_by_id: Dict[int, ImageDetections] = {}
    for img in preds:
        if img.image_id not in by_id:
            raise DomainError(f"predictions for unknown image id {img.image_id}")
        if img.image_id in pred_by_id:
            raise DomainError(f"duplicate prediction image id {img.image_id}")
        pred_by_id[img.image_id] = img
    return [
        (pred_by_id.get(image_id, ImageDetections(image_id)), ann)
        for image_id, ann in sorted(by_id.items())
    ]


def _class_ap(
    pairs: List[Tuple[ImageDetections, ImageAnnotations]],
    class_id: int,
    iou_thr: float,
    max_dets: int,
) -> float:
    scored: List[Tuple[float, bool]] = []
    n_gt = 0
    for img, ann in pairs:
        cls_gts = [g for g in ann.gts if g.class_id == class_id]
        cls_dets = sorted((d for d in img.detections if d.class_id == class_id), key=lambda d: -d.score)
        cls_dets = cls_dets[:max_dets]
        n_gt += len(cls_gts)
        view = ImageDetections(img.image_id, tuple(cls_dets))
        for i, j in match_greedy(view, cls_gts, iou_thr):
            scored.append((cls_dets[i].score, j is not None))
    return average_precision(scored, n_gt)


def map_50_95(
    preds: Sequence[ImageDetections],
    gts: Sequence[ImageAnnotations],
    max_dets: int = 100,
    iou_thresholds: Sequence[float] = IOU_THRESHOLDS,
    threads: Optional[int] = 1,
) -> EvalResult:
    """
    COCO mAP averaged over IoU thresholds 0.50:0.05:0.95

    Classes without GT anywhere are left out of the mean.

    Raises:
        UndefinedMetricError: the dataset has no GT at all
    """
    if max_dets < 1:
        raise DomainError(f"max_dets must be >= 1, got {max_dets}")
    pairs = _pair_images(preds, gts)
    classes = sorted({g.class_id for _, ann in pairs for g in ann.gts})
    if not classes:
        raise UndefinedMetricError("mAP is undefined without ground truth")

    def per_class(class_id: int) -> List[float]:
        return [_class_ap(pairs, class_id, t, max_dets) for t in iou_thresholds]

    workers = min(worker_count(threads), len(classes))
    if workers <= 1:
        table = [per_class(c) for c in classes]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            table = list(pool.map(per_class, classes))

    grid = np.asarray(table)
    return EvalResult(
        ap_per_iou_threshold={float(t): float(v) for t, v in zip(iou_thresholds, grid.mean(axis=0))},
        map_50_95=float(grid.mean()),
        per_class_ap={c: float(v) for c, v in zip(classes, grid.mean(axis=1))},
    )


# ---------------- temporal inconsistency ----------------

def pairwise_inconsistency(
    prev: Sequence[ImageDetections],
    curr: Sequence[ImageDetections],
    gt_cutoff: float = DEFAULT_GT_CUTOFF,
) -> float:
    """
    1 - mAP of curr scored against prev promoted to GT

    When nothing in prev reaches the cutoff the term is 0 unless curr has a
    detection at or above the cutoff, in which case it is 1.
    """
    gts = [img.above(gt_cutoff).as_annotations() for img in prev]
    if not any(ann.gts for ann in gts):
        return 1.0 if any(img.above(gt_cutoff).detections for img in curr) else 0.0
    return 1.0 - map_50_95(curr, gts).map_50_95


def inconsistency(
    checkpoint_preds: Sequence[Sequence[ImageDetections]],
    gt_cutoff: float = DEFAULT_GT_CUTOFF,
) -> float:
    """
    Sum of 1 - mAP over consecutive checkpoint pairs on a fixed image set.

    Raises:
        DomainError: fewer than 2 checkpoints
    """
    if len(checkpoint_preds) < 2:
        raise DomainError("inconsistency needs at least 2 checkpoints")
    return float(sum(
        pairwise_inconsistency(prev, curr, gt_cutoff)
        for prev, curr in zip(checkpoint_preds, checkpoint_preds[1:])
    ))


# ---------------- confidence / IoU misalignment ----------------

def confidence_iou_pairs(
    dets: Sequence[ImageDetections],
    gts: Sequence[ImageAnnotations],
) -> List[Tuple[float, float]]:
    """(score, max IoU with a same-class GT) per detection; IoU 0 without such a GT."""
    pairs: List[Tuple[float, float]] = []
    for img, ann in _pair_images(dets, gts):
        for d in img.detections:
            same = [g.bbox for g in ann.gts if g.class_id == d.class_id]
            best = float(iou_matrix(boxes_to_array([d.bbox]), boxes_to_array(same)).max()) if same else 0.0
            pairs.append((d.score, best))
    return pairs


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    std_error: float
    n: int

    def to_dict(self) -> Dict[str, float]:
        return {"slope": self.slope, "intercept": self.intercept, "std_error": self.std_error, "n": self.n}


def confidence_iou_regression(pairs: Sequence[Tuple[float, float]]) -> RegressionResult:
    """
    OLS of IoU on confidence; std_error = sqrt(SSR / (n - 2))

    Raises:
        DomainError: fewer than 3 pairs
        DegenerateError: all confidences equal
    """
    if len(pairs) < 3:
        raise DomainError(f"regression needs at least 3 pairs, got {len(pairs)}")
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    if np.all(x == x[0]):
        raise DegenerateError("confidence values are constant")
    fit = stats.linregress(x, y)
    residuals = y - (fit.intercept + fit.slope * x)
    ssr = float(residuals @ residuals)
    return RegressionResult(float(fit.slope), float(fit.intercept), math.sqrt(ssr / (len(x) - 2)), len(x))
