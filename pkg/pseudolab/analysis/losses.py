"""
PseudoLab loss kernels

Focal / quality focal classification losses, the GIoU regression loss,
the anchor-to-GT matching cost and the supervised + unsupervised loss sum.
Kernels accept floats or numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ..core.geom import BBox, boxes_to_array, center_distance_matrix, giou, giou_matrix, iou_matrix
from ..core.records import GroundTruth, Prediction
from ..errors import DomainError

ArrayLike = Union[float, np.ndarray]

EPS = 1e-7


@dataclass(frozen=True)
class FocalParams:
    gamma: float = 2.0
    alpha: float = 0.25

    def __post_init__(self) -> None:
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise DomainError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 <= self.alpha <= 1:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class CostParams:
    """Weights of the regression term and of the centre prior in the matching cost."""
    lambda_reg: float = 2.0
    lambda_dist: float = 0.001

    def __post_init__(self) -> None:
        for name in ("lambda_reg", "lambda_dist"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise DomainError(f"{name} must be finite and >= 0, got {value}")


def _scalar_or_array(x: np.ndarray) -> ArrayLike:
    return float(x) if np.ndim(x) == 0 else x


def _clamp(p: ArrayLike) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=float), EPS, 1 - EPS)


def binary_cross_entropy(p: ArrayLike, q: ArrayLike) -> ArrayLike:
    """BCE of a clamped probability p against a soft target q in [0, 1]."""
    p = _clamp(p)
    q = np.asarray(q, dtype=float)
    return _scalar_or_array(-(q * np.log(p) + (1 - q) * np.log1p(-p)))


def focal_loss(p: ArrayLike, target: ArrayLike, fp: FocalParams = FocalParams()) -> ArrayLike:
    """FL = -alpha_t * (1 - p_t)^gamma * log(p_t)"""
    p = _clamp(p)
    positive = np.asarray(target).astype(bool)
    p_t = np.where(positive, p, 1 - p)
    alpha_t = np.where(positive, fp.alpha, 1 - fp.alpha)
    return _scalar_or_array(-alpha_t * (1 - p_t) ** fp.gamma * np.log(p_t))


def focal_loss_grad(p: ArrayLike, target: ArrayLike, fp: FocalParams = FocalParams()) -> ArrayLike:
    """d focal_loss / d p on the clamped domain."""
    p = _clamp(p)
    positive = np.asarray(target).astype(bool)
    p_t = np.where(positive, p, 1 - p)
    alpha_t = np.where(positive, fp.alpha, 1 - fp.alpha)
    sign = np.where(positive, 1.0, -1.0)
    one_minus = 1 - p_t
    d_pt = alpha_t * (fp.gamma * one_minus ** (fp.gamma - 1) * np.log(p_t) - one_minus ** fp.gamma / p_t)
    return _scalar_or_array(sign * d_pt)


def quality_focal_loss(p: ArrayLike, quality: ArrayLike, fp: FocalParams = FocalParams()) -> ArrayLike:
    """QFL = |quality - p|^gamma * BCE(p, quality); alpha is not used."""
    p = _clamp(p)
    q = np.asarray(quality, dtype=float)
    bce = -(q * np.log(p) + (1 - q) * np.log1p(-p))
    return _scalar_or_array(np.abs(q - p) ** fp.gamma * bce)


def giou_loss(pred: BBox, target: BBox) -> float:
    return 1.0 - giou(pred, target)


def cost_matrix(
    predictions: Sequence[Prediction],
    gts: Sequence[GroundTruth],
    cp: CostParams = CostParams(),
    fp: FocalParams = FocalParams(),
    *,
    anchors: Sequence[BBox],
    cls_cost: str = "focal",
) -> np.ndarray:
    """
    Matching cost between every anchor and every GT

    C[i, j] = L_cls(p_i[c_j]) + lambda_reg * (1 - GIoU(bbox_i, gt_j))
              + lambda_dist * |centre(anchor_i) - centre(gt_j)|

    Args:
        predictions: one prediction per anchor, in anchor order
        gts: ground truth (or pseudo) boxes
        anchors: anchor boxes, used by the centre prior
        cls_cost: "focal" (target 1) or "qfl" (target IoU(bbox_i, gt_j))

    Returns:
        (len(anchors), len(gts)) array of non-negative costs
    """
    if len(predictions) != len(anchors):
        raise DomainError(f"{len(predictions)} predictions for {len(anchors)} anchors")
    if not gts or not predictions:
        return np.zeros((len(predictions), len(gts)))
    num_classes = predictions[0].num_classes
    if any(p.num_classes != num_classes for p in predictions):
        raise DomainError("all predictions must carry the same number of classes")
    gt_classes = np.array([g.class_id for g in gts])
    if gt_classes.max() >= num_classes:
        raise DomainError(f"GT class {gt_classes.max()} outside {num_classes} predicted classes")

    probs = np.asarray([p.class_probs for p in predictions], dtype=float)[:, gt_classes]
    pred_boxes = boxes_to_array(p.bbox for p in predictions)
    gt_boxes = boxes_to_array(g.bbox for g in gts)

    if cls_cost == "focal":
        cls = focal_loss(probs, np.ones_like(probs), fp)
    elif cls_cost == "qfl":
        cls = quality_focal_loss(probs, iou_matrix(pred_boxes, gt_boxes), fp)
    else:
        raise DomainError(f"unknown classification cost: {cls_cost}")

    reg = 1.0 - giou_matrix(pred_boxes, gt_boxes)
    dist = center_distance_matrix(boxes_to_array(anchors), gt_boxes)
    return cls + cp.lambda_reg * reg + cp.lambda_dist * dist


def combined_loss(
    sup_cls: float,
    sup_reg: float,
    unsup_cls: float,
    unsup_reg: float,
    lambda_u: float = 2.0,
    unsup_reg_weight: Optional[float] = None,
) -> float:
    """
    (sup_cls + sup_reg) + lambda_u * (unsup_cls + w * unsup_reg)

    Args:
        lambda_u: weight of the unlabeled (pseudo-label) branch
        unsup_reg_weight: w, weight of the unlabeled regression term (1 when None)
    """
    w = 1.0 if unsup_reg_weight is None else unsup_reg_weight
    return (sup_cls + sup_reg) + lambda_u * (unsup_cls + w * unsup_reg)
