"""
PseudoLab box geometry

Axis-aligned boxes in image coordinates: areas, overlaps, GIoU, centre
distances and the coordinate-noise model used for label-noise experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from ..errors import DomainError


@dataclass(frozen=True)
class BBox:
    """
    Axis-aligned box (x1, y1, x2, y2)

    Attributes:
        x1, y1: top-left corner
        x2, y2: bottom-right corner, x1 <= x2 and y1 <= y2
    """
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise DomainError(f"box coordinates must be finite: {coords}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise DomainError(f"inverted box: {coords}")

    @property
    def w(self) -> float:
        return self.x2 - self.x1

    @property
    def h(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2

    @property
    def is_degenerate(self) -> bool:
        return self.w == 0 or self.h == 0

    def to_list(self) -> List[float]:
        """JSON form `[x1, y1, x2, y2]`"""
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        if len(values) != 4:
            raise DomainError(f"a box needs 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def area(b: BBox) -> float:
    return b.w * b.h


def _intersection(a: BBox, b: BBox) -> float:
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 whenever the union has no area."""
    inter = _intersection(a, b)
    union = area(a) + area(b) - inter
    if union <= 0:
        return 0.0
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    """
    Generalized IoU: IoU - (|C| - |A u B|) / |C| with C the enclosing box

    Raises:
        DomainError: both boxes are degenerate
    """
    if a.is_degenerate and b.is_degenerate:
        raise DomainError("giou is undefined for two degenerate boxes")
    inter = _intersection(a, b)
    union = area(a) + area(b) - inter
    enclosing = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    overlap = inter / union if union > 0 else 0.0
    return overlap - (enclosing - union) / enclosing


def center_distance(a: BBox, b: BBox) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


# ---------------- vectorized forms ----------------

def boxes_to_array(boxes: Iterable[BBox]) -> np.ndarray:
    """Stack boxes into an (N, 4) float array."""
    rows = [b.to_list() for b in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=float)
    return np.asarray(rows, dtype=float)


def _pairwise_overlap(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    return inter, union


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Pairwise IoU of two box arrays

    Args:
        a: (N, 4) boxes
        b: (M, 4) boxes

    Returns:
        (N, M) array, elementwise equal to iou()
    """
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    inter, union = _pairwise_overlap(a, b)
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def giou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise GIoU; raises DomainError if any pair is doubly degenerate."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    deg_a = (a[:, 2] == a[:, 0]) | (a[:, 3] == a[:, 1])
    deg_b = (b[:, 2] == b[:, 0]) | (b[:, 3] == b[:, 1])
    if np.any(deg_a[:, None] & deg_b[None, :]):
        raise DomainError("giou is undefined for two degenerate boxes")
    inter, union = _pairwise_overlap(a, b)
    lt = np.minimum(a[:, None, :2], b[None, :, :2])
    rb = np.maximum(a[:, None, 2:], b[None, :, 2:])
    wh = rb - lt
    enclosing = wh[..., 0] * wh[..., 1]
    overlap = np.zeros_like(inter)
    np.divide(inter, union, out=overlap, where=union > 0)
    return overlap - (enclosing - union) / enclosing


def center_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    ca = (a[:, :2] + a[:, 2:]) / 2
    cb = (b[:, :2] + b[:, 2:]) / 2
    return np.linalg.norm(ca[:, None, :] - cb[None, :, :], axis=-1)


# ---------------- label noise ----------------

@dataclass
class NoiseModel:
    """
    Gaussian coordinate noise with ratio rho

    Each coordinate moves by eps * extent, eps ~ N(0, rho^2), extent being
    the box width for x and the height for y. The model owns its generator:
    clone it instead of sharing across threads.

    Attributes:
        rho: noise ratio (std as a fraction of the box extent)
        seed: base seed of the stream
        stream: extra keys mixed into the seed, e.g. (rho_index, trial)
    """
    rho: float
    seed: int = 0
    stream: Tuple[int, ...] = ()
    rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not math.isfinite(self.rho) or self.rho < 0:
            raise DomainError(f"noise ratio must be finite and >= 0, got {self.rho}")
        self.rng = np.random.default_rng([self.seed, *self.stream])

    @classmethod
    def derived(cls, rho: float, seed: int, *keys: int) -> "NoiseModel":
        return cls(rho=rho, seed=seed, stream=tuple(int(k) for k in keys))

    def clone(self) -> "NoiseModel":
        """Fresh model at the start of the same stream."""
        return NoiseModel(rho=self.rho, seed=self.seed, stream=self.stream)


def perturb(b: BBox, noise: NoiseModel) -> BBox:
    """
    Shift every coordinate of b by Gaussian noise scaled to the box extent.

    Draws one standard normal per coordinate in the order (x1, y1, x2, y2).
    An axis that comes out inverted has its coordinate pair swapped.
    """
    z = noise.rng.standard_normal(4)
    if noise.rho == 0:
        return b
    eps = noise.rho * z
    x1 = b.x1 + eps[0] * b.w
    y1 = b.y1 + eps[1] * b.h
    x2 = b.x2 + eps[2] * b.w
    y2 = b.y2 + eps[3] * b.h
    if x1 > x2:
        x1, x2 = x2, x1
    if y1 > y2:
        y1, y2 = y2, y1
    return BBox(float(x1), float(y1), float(x2), float(y2))
