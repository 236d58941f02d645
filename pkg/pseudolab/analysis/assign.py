"""
PseudoLab label assignment

Three strategies map anchors to positive / negative / ignore:
  - assign_iou: static IoU thresholds with low-quality match rescue
  - assign_atss: per-level closest-centre candidates, mean + std IoU threshold
  - assign_asa: per-GT top-K lowest matching cost

plus the assignment IoU (A-IOU) used to measure how stable an assigner is
when GT boxes are perturbed.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from ..config import worker_count
from ..core.geom import NoiseModel, boxes_to_array, center_distance_matrix, iou_matrix, perturb
from ..core.records import GroundTruth, Prediction
from ..errors import DomainError
from .losses import CostParams, FocalParams, cost_matrix
from .pyramid import Anchor

logger = logging.getLogger(__name__)


class AssignState(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    IGNORE = "ignore"


@dataclass(frozen=True)
class AnchorLabel:
    """State of one anchor; gt_index and cost are set only for positives."""
    state: AssignState
    gt_index: Optional[int] = None
    cost: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"state": self.state.value, "gt": self.gt_index}
        if self.state is AssignState.POSITIVE:
            d["cost"] = self.cost
        return d


NEGATIVE = AnchorLabel(AssignState.NEGATIVE)
IGNORE = AnchorLabel(AssignState.IGNORE)


@dataclass(frozen=True)
class AssignmentResult:
    """
    Per-anchor assignment

    Attributes:
        labels: one AnchorLabel per anchor
        num_gts: number of GTs the result was computed against
    """
    labels: Tuple[AnchorLabel, ...]
    num_gts: int

    def __post_init__(self) -> None:
        for label in self.labels:
            if label.state is AssignState.POSITIVE and (label.gt_index is None or not 0 <= label.gt_index < self.num_gts):
                raise DomainError(f"positive anchor references GT {label.gt_index} of {self.num_gts}")

    def positives(self, gt_index: int) -> FrozenSet[int]:
        return frozenset(
            i for i, label in enumerate(self.labels)
            if label.state is AssignState.POSITIVE and label.gt_index == gt_index
        )

    @property
    def num_positive(self) -> int:
        return sum(1 for label in self.labels if label.state is AssignState.POSITIVE)

    def to_dict(self) -> Dict[str, Any]:
        return {"anchors": [label.to_dict() for label in self.labels]}

    @classmethod
    def all_negative(cls, num_anchors: int, num_gts: int = 0) -> "AssignmentResult":
        return cls(tuple(NEGATIVE for _ in range(num_anchors)), num_gts)


@dataclass(frozen=True)
class Scene:
    """One image worth of assignment inputs."""
    anchors: Tuple[Anchor, ...]
    predictions: Tuple[Prediction, ...]
    gts: Tuple[GroundTruth, ...]


@dataclass(frozen=True)
class AsaParams:
    lambda_reg: float = 2.0
    lambda_dist: float = 0.001
    k: int = 13

    def __post_init__(self) -> None:
        if self.k < 1:
            raise DomainError(f"K must be >= 1, got {self.k}")

    @property
    def cost(self) -> CostParams:
        return CostParams(self.lambda_reg, self.lambda_dist)


def _anchor_array(anchors: Sequence[Anchor]) -> np.ndarray:
    return boxes_to_array(a.bbox for a in anchors)


def assign_iou(
    anchors: Sequence[Anchor],
    gts: Sequence[GroundTruth],
    pos_thr: float = 0.5,
    neg_thr: float = 0.4,
) -> AssignmentResult:
    """
    Static IoU assignment

    Positive when the best IoU >= pos_thr, negative below neg_thr, ignore in
    between. Each GT's best anchor (first on ties, IoU > 0 required) is
    forced positive unless the threshold rule already made it positive.
    """
    if not 0 <= neg_thr <= pos_thr <= 1:
        raise DomainError(f"thresholds must satisfy 0 <= neg <= pos <= 1, got ({pos_thr}, {neg_thr})")
    if not gts:
        return AssignmentResult.all_negative(len(anchors))
    if not anchors:
        return AssignmentResult((), len(gts))

    overlaps = iou_matrix(_anchor_array(anchors), boxes_to_array(g.bbox for g in gts))
    best_gt = overlaps.argmax(axis=1)
    best_iou = overlaps.max(axis=1)

    labels: List[AnchorLabel] = []
    for i, (j, v) in enumerate(zip(best_gt, best_iou)):
        if v >= pos_thr:
            labels.append(AnchorLabel(AssignState.POSITIVE, int(j), float(1.0 - v)))
        elif v < neg_thr:
            labels.append(NEGATIVE)
        else:
            labels.append(IGNORE)

    for j in range(len(gts)):
        i = int(overlaps[:, j].argmax())
        v = overlaps[i, j]
        if v > 0 and labels[i].state is not AssignState.POSITIVE:
            labels[i] = AnchorLabel(AssignState.POSITIVE, j, float(1.0 - v))

    return AssignmentResult(tuple(labels), len(gts))


def assign_atss(
    anchors: Sequence[Anchor],
    gts: Sequence[GroundTruth],
    topk_per_level: int = 9,
) -> AssignmentResult:
    """
    Adaptive training sample selection

    For every GT, the topk_per_level anchors closest to its centre on each
    level are candidates; a candidate is positive when its IoU reaches the
    mean + std of the candidate IoUs and its centre lies inside the GT.
    Anchors claimed twice go to the GT with the higher IoU.
    """
    if topk_per_level < 1:
        raise DomainError(f"topk_per_level must be >= 1, got {topk_per_level}")
    if not gts:
        return AssignmentResult.all_negative(len(anchors))
    if not anchors:
        return AssignmentResult((), len(gts))

    anchor_boxes = _anchor_array(anchors)
    gt_boxes = boxes_to_array(g.bbox for g in gts)
    overlaps = iou_matrix(anchor_boxes, gt_boxes)
    distances = center_distance_matrix(anchor_boxes, gt_boxes)
    levels = np.array([a.level for a in anchors])

    candidates = np.zeros_like(overlaps, dtype=bool)
    for level in np.unique(levels):
        idx = np.flatnonzero(levels == level)
        k = min(topk_per_level, idx.size)
        for j in range(len(gts)):
            order = np.argsort(distances[idx, j], kind="stable")[:k]
            candidates[idx[order], j] = True

    centers = (anchor_boxes[:, :2] + anchor_boxes[:, 2:]) / 2
    inside = (
        (centers[:, None, 0] > gt_boxes[None, :, 0])
        & (centers[:, None, 0] < gt_boxes[None, :, 2])
        & (centers[:, None, 1] > gt_boxes[None, :, 1])
        & (centers[:, None, 1] < gt_boxes[None, :, 3])
    )

    accepted = np.zeros_like(candidates)
    for j in range(len(gts)):
        cand = overlaps[candidates[:, j], j]
        threshold = cand.mean() + cand.std()
        accepted[:, j] = candidates[:, j] & (overlaps[:, j] >= threshold) & inside[:, j]

    masked = np.where(accepted, overlaps, -np.inf)
    owner = masked.argmax(axis=1)
    labels = [
        AnchorLabel(AssignState.POSITIVE, int(owner[i]), float(1.0 - overlaps[i, owner[i]]))
        if accepted[i].any() else NEGATIVE
        for i in range(len(anchors))
    ]
    return AssignmentResult(tuple(labels), len(gts))


def _ordered_predictions(predictions: Sequence[Prediction], num_anchors: int) -> List[Prediction]:
    ordered = sorted(predictions, key=lambda p: p.anchor_index)
    if [p.anchor_index for p in ordered] != list(range(num_anchors)):
        raise DomainError("exactly one prediction per anchor is required")
    return ordered


def assign_asa(
    anchors: Sequence[Anchor],
    predictions: Sequence[Prediction],
    gts: Sequence[GroundTruth],
    params: AsaParams = AsaParams(),
    fp: FocalParams = FocalParams(),
    cls_cost: str = "focal",
) -> AssignmentResult:
    """
    Adaptive sample assignment by matching cost

    Each GT nominates its K cheapest anchors (ties: lower anchor index). An
    anchor nominated by several GTs goes to the cheapest one (ties: lower GT
    index); the losing GT gets no replacement. Everything else is negative.
    """
    if not gts:
        return AssignmentResult.all_negative(len(anchors))
    ordered = _ordered_predictions(predictions, len(anchors))
    if not anchors:
        return AssignmentResult((), len(gts))

    costs = cost_matrix(ordered, gts, params.cost, fp, anchors=[a.bbox for a in anchors], cls_cost=cls_cost)
    k = min(params.k, len(anchors))

    nominated = np.zeros_like(costs, dtype=bool)
    for j in range(len(gts)):
        nominated[np.argsort(costs[:, j], kind="stable")[:k], j] = True

    masked = np.where(nominated, costs, np.inf)
    owner = masked.argmin(axis=1)
    labels = [
        AnchorLabel(AssignState.POSITIVE, int(owner[i]), float(costs[i, owner[i]]))
        if nominated[i].any() else NEGATIVE
        for i in range(len(anchors))
    ]
    return AssignmentResult(tuple(labels), len(gts))


# ---------------- assignment consistency ----------------

Assigner = Callable[[Sequence[Anchor], Sequence[Prediction], Sequence[GroundTruth]], AssignmentResult]


def make_assigner(name: str, **params: Any) -> Assigner:
    """
    Wrap a strategy behind the common (anchors, predictions, gts) signature.

    Args:
        name: "iou", "atss" or "asa"
        params: strategy keyword arguments (pos_thr/neg_thr, topk_per_level,
                or lambda_reg/lambda_dist/k/cls_cost)
    """
    if name == "iou":
        pos_thr = params.get("pos_thr", 0.5)
        neg_thr = params.get("neg_thr", 0.4)
        return lambda anchors, predictions, gts: assign_iou(anchors, gts, pos_thr, neg_thr)
    if name == "atss":
        topk = params.get("topk_per_level", 9)
        return lambda anchors, predictions, gts: assign_atss(anchors, gts, topk)
    if name == "asa":
        asa = AsaParams(
            lambda_reg=params.get("lambda_reg", 2.0),
            lambda_dist=params.get("lambda_dist", 0.001),
            k=params.get("k", 13),
        )
        cls_cost = params.get("cls_cost", "focal")
        return lambda anchors, predictions, gts: assign_asa(anchors, predictions, gts, asa, cls_cost=cls_cost)
    raise DomainError(f"unknown assigner: {name}")


def assignment_aiou(a: AssignmentResult, b: AssignmentResult, gt_index: int) -> float:
    """Jaccard index of the positive anchors of one GT in two assignments (1 if both empty)."""
    if len(a.labels) != len(b.labels):
        raise DomainError(f"assignments cover {len(a.labels)} and {len(b.labels)} anchors")
    if not (0 <= gt_index < a.num_gts and gt_index < b.num_gts):
        raise DomainError(f"GT index {gt_index} out of range")
    pa, pb = a.positives(gt_index), b.positives(gt_index)
    union = pa | pb
    if not union:
        return 1.0
    return len(pa & pb) / len(union)


@dataclass(frozen=True)
class AiouRow:
    rho: float
    mean_aiou: float
    std_aiou: float
    trials: int


def _trial_aiou(scene: Scene, assigner: Assigner, clean: AssignmentResult, noise: NoiseModel) -> float:
    if not scene.gts:
        return 1.0
    noisy_gts = [GroundTruth(perturb(g.bbox, noise), g.class_id) for g in scene.gts]
    noisy = assigner(scene.anchors, scene.predictions, noisy_gts)
    return float(np.mean([assignment_aiou(clean, noisy, j) for j in range(len(scene.gts))]))


def aiou_trial_values(
    scene: Scene,
    assigner: Assigner,
    rho: float,
    rho_index: int,
    trials: int,
    seed: int,
    stream: Tuple[int, ...] = (),
    clean: Optional[AssignmentResult] = None,
) -> np.ndarray:
    """
    Per-trial GT-averaged A-IOU at one noise ratio

    Trial t draws its noise from the stream (seed, *stream, rho_index, t).
    """
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    if clean is None:
        clean = assigner(scene.anchors, scene.predictions, scene.gts)
    return np.array([
        _trial_aiou(scene, assigner, clean, NoiseModel.derived(rho, seed, *stream, rho_index, t))
        for t in range(trials)
    ])


def aiou_experiment(
    scene: Scene,
    assigner: Assigner,
    rhos: Sequence[float],
    trials: int = 100,
    seed: int = 0,
    threads: Optional[int] = None,
) -> List[AiouRow]:
    """
    A-IOU between clean and noisy assignments over a grid of noise ratios

    Returns:
        one AiouRow per rho, in input order
    """
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    clean = assigner(scene.anchors, scene.predictions, scene.gts)
    tasks = [(r, t) for r in range(len(rhos)) for t in range(trials)]

    def run(task: Tuple[int, int]) -> float:
        r, t = task
        return _trial_aiou(scene, assigner, clean, NoiseModel.derived(rhos[r], seed, r, t))

    workers = worker_count(threads)
    if workers <= 1:
        values = [run(task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(run, tasks))

    grid = np.asarray(values).reshape(len(rhos), trials)
    rows = [AiouRow(float(rho), float(v.mean()), float(v.std()), trials) for rho, v in zip(rhos, grid)]
    for row in rows:
        logger.debug("A-IOU rho=%.3f mean=%.4f std=%.4f", row.rho, row.mean_aiou, row.std_aiou)
    return rows
