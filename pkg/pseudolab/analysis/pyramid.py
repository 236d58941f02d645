"""
PseudoLab feature pyramid

Anchor tiling over a dyadic feature pyramid and the offset-driven
resampling used for feature alignment: an in-plane step that moves every
cell by (d0, d1) on its own level, then a cross-scale step that reads the
cell from level l + d2 at rescaled coordinates.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..config import worker_count
from ..core.geom import BBox
from ..errors import DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LevelSpec:
    stride: int
    height: int
    width: int


@dataclass(frozen=True)
class PyramidSpec:
    """
    Pyramid geometry and anchor shapes

    Attributes:
        levels: per-level (stride, height, width), finest first
        anchor_scales: anchor side as a multiple of the stride
        anchor_ratios: anchor aspect ratios h/w
    """
    levels: Tuple[LevelSpec, ...]
    anchor_scales: Tuple[float, ...] = (4.0,)
    anchor_ratios: Tuple[float, ...] = (1.0,)

    def __post_init__(self) -> None:
        if not self.levels:
            raise DomainError("a pyramid needs at least one level")
        if not self.anchor_scales or not self.anchor_ratios:
            raise DomainError("at least one anchor scale and one anchor ratio are required")
        if any(s <= 0 for s in self.anchor_scales) or any(r <= 0 for r in self.anchor_ratios):
            raise DomainError("anchor scales and ratios must be positive")
        for lvl in self.levels:
            if lvl.stride <= 0 or lvl.height <= 0 or lvl.width <= 0:
                raise DomainError(f"level sizes must be positive: {lvl}")
        for lo, hi in zip(self.levels, self.levels[1:]):
            if hi.stride != 2 * lo.stride:
                raise DomainError(f"strides must double between levels: {lo.stride} -> {hi.stride}")
            if hi.height != math.ceil(lo.height / 2) or hi.width != math.ceil(lo.width / 2):
                raise DomainError(
                    f"level {hi} is not the ceil-half of {lo}"
                )

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @classmethod
    def build(
        cls,
        base_stride: int,
        height: int,
        width: int,
        num_levels: int,
        scales: Sequence[float] = (4.0,),
        ratios: Sequence[float] = (1.0,),
    ) -> "PyramidSpec":
        """
        Build a dyadic spec by halving (ceil) the finest grid.

        Args:
            base_stride: stride of the finest level
            height, width: grid size of the finest level
            num_levels: number of levels
        """
        levels = []
        stride, h, w = base_stride, height, width
        for _ in range(num_levels):
            levels.append(LevelSpec(stride, h, w))
            stride, h, w = stride * 2, math.ceil(h / 2), math.ceil(w / 2)
        return cls(tuple(levels), tuple(float(s) for s in scales), tuple(float(r) for r in ratios))


@dataclass(frozen=True)
class Anchor:
    """Reference box tiled on a pyramid cell."""
    bbox: BBox
    level: int = 0
    cell: Tuple[int, int] = (0, 0)


def generate_anchors(spec: PyramidSpec) -> List[Anchor]:
    """
    One anchor per (level, cell, scale, ratio)

    Order is level-major, then row-major over cells, then scale, then ratio.
    """
    anchors: List[Anchor] = []
    for li, lvl in enumerate(spec.levels):
        for row in range(lvl.height):
            for col in range(lvl.width):
                cx = (col + 0.5) * lvl.stride
                cy = (row + 0.5) * lvl.stride
                for scale in spec.anchor_scales:
                    for ratio in spec.anchor_ratios:
                        w = lvl.stride * scale / math.sqrt(ratio)
                        h = lvl.stride * scale * math.sqrt(ratio)
                        anchors.append(Anchor(BBox.from_center(cx, cy, w, h), li, (row, col)))
    return anchors


@dataclass(frozen=True)
class FeaturePyramid:
    """
    Dense per-level feature grids

    Attributes:
        spec: pyramid geometry
        data: per level, a (channels, height, width) float array
    """
    spec: PyramidSpec
    data: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.data) != self.spec.num_levels:
            raise DomainError(f"expected {self.spec.num_levels} levels, got {len(self.data)}")
        channels = None
        for lvl, grid in zip(self.spec.levels, self.data):
            if grid.ndim != 3 or grid.shape[1:] != (lvl.height, lvl.width):
                raise DomainError(f"level grid {grid.shape} does not match {lvl}")
            if channels is None:
                channels = grid.shape[0]
            elif grid.shape[0] != channels:
                raise DomainError("channel count must be constant across levels")
            if not np.all(np.isfinite(grid)):
                raise DomainError("feature values must be finite")

    @property
    def channels(self) -> int:
        return self.data[0].shape[0]


@dataclass(frozen=True)
class OffsetField:
    """Per-cell offsets (d0 rows, d1 columns, d2 levels), one (3, H, W) grid per level."""
    data: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        for grid in self.data:
            if grid.ndim != 3 or grid.shape[0] != 3:
                raise DomainError(f"offset grids must have shape (3, H, W), got {grid.shape}")
            if not np.all(np.isfinite(grid)):
                raise DomainError("offsets must be finite")

    @classmethod
    def zeros(cls, spec: PyramidSpec) -> "OffsetField":
        return cls(tuple(np.zeros((3, lvl.height, lvl.width)) for lvl in spec.levels))


def _check_structure(P: FeaturePyramid, D: OffsetField) -> None:
    if len(D.data) != P.spec.num_levels:
        raise DomainError(f"offset field has {len(D.data)} levels, pyramid has {P.spec.num_levels}")
    for grid, lvl in zip(D.data, P.spec.levels):
        if grid.shape[1:] != (lvl.height, lvl.width):
            raise DomainError(f"offset grid {grid.shape} does not match {lvl}")


def _bilinear(grid: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample every channel of a (C, H, W) grid at clamped fractional positions."""
    _, h, w = grid.shape
    coords = np.stack([np.clip(rows, 0, h - 1).ravel(), np.clip(cols, 0, w - 1).ravel()])
    out = np.empty((grid.shape[0], rows.size))
    for c in range(grid.shape[0]):
        out[c] = ndimage.map_coordinates(grid[c], coords, order=1, mode="nearest")
    return out.reshape((grid.shape[0],) + rows.shape)


def _run_levels(fn, count: int, threads: Optional[int]) -> Tuple[np.ndarray, ...]:
    workers = min(worker_count(threads), count)
    if workers <= 1:
        return tuple(fn(i) for i in range(count))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return tuple(pool.map(fn, range(count)))


def resample_inplane(P: FeaturePyramid, D: OffsetField, threads: Optional[int] = None) -> FeaturePyramid:
    """P'(i, j, l) <- P(i + d0, j + d1, l), bilinear with border clamping."""
    _check_structure(P, D)

    def level(li: int) -> np.ndarray:
        grid, off = P.data[li], D.data[li]
        ii, jj = np.indices(grid.shape[1:], dtype=float)
        return _bilinear(grid, ii + off[0], jj + off[1])

    return FeaturePyramid(P.spec, _run_levels(level, P.spec.num_levels, threads))


def resample_scale(P: FeaturePyramid, D: OffsetField, threads: Optional[int] = None) -> FeaturePyramid:
    """
    P'(i, j, l) <- P(i', j', l + d2)

    The target level t = clamp(l + d2, 0, L - 1) may be fractional: the two
    neighbouring levels are each sampled at (i * H_s / H_l, j * W_s / W_l)
    and blended linearly.
    """
    _check_structure(P, D)
    n_levels = P.spec.num_levels

    def level(li: int) -> np.ndarray:
        lvl = P.spec.levels[li]
        target = np.clip(li + D.data[li][2], 0, n_levels - 1)
        ii, jj = np.indices((lvl.height, lvl.width), dtype=float)
        out = np.zeros_like(P.data[li])
        for si, src in enumerate(P.spec.levels):
            weight = np.clip(1.0 - np.abs(target - si), 0.0, None)
            if not np.any(weight > 0):
                continue
            sampled = _bilinear(P.data[si], ii * src.height / lvl.height, jj * src.width / lvl.width)
            out += weight[None] * sampled
        return out

    return FeaturePyramid(P.spec, _run_levels(level, n_levels, threads))


def fam3d(P: FeaturePyramid, D: OffsetField, threads: Optional[int] = None) -> FeaturePyramid:
    """In-plane step first, then the cross-scale step on its output."""
    return resample_scale(resample_inplane(P, D, threads), D, threads)


def fam2d(P: FeaturePyramid, D: OffsetField, threads: Optional[int] = None) -> FeaturePyramid:
    """Single-scale alignment: the in-plane step alone, d2 ignored."""
    return resample_inplane(P, D, threads)


def align_features(P: FeaturePyramid, D: OffsetField, mode: str = "3d", threads: Optional[int] = None) -> FeaturePyramid:
    if mode == "3d":
        return fam3d(P, D, threads)
    if mode == "2d":
        return fam2d(P, D, threads)
    if mode == "none":
        _check_structure(P, D)
        return P
    raise DomainError(f"unknown alignment mode: {mode}")


# ---------------- JSON codec ----------------

def pyramid_to_json(P: FeaturePyramid) -> Dict[str, Any]:
    """`{levels: [{stride, h, w, data}], channels}`, data row-major per channel."""
    return {
        "channels": P.channels,
        "levels": [
            {
                "stride": lvl.stride,
                "h": lvl.height,
                "w": lvl.width,
                "data": [grid[c].ravel().tolist() for c in range(grid.shape[0])],
            }
            for lvl, grid in zip(P.spec.levels, P.data)
        ],
    }


def _grids_from_json(doc: Dict[str, Any]) -> Tuple[PyramidSpec, Tuple[np.ndarray, ...]]:
    levels = []
    grids = []
    channels = int(doc["channels"])
    for item in doc["levels"]:
        lvl = LevelSpec(int(item["stride"]), int(item["h"]), int(item["w"]))
        raw = np.asarray(item["data"], dtype=float)
        if raw.size != channels * lvl.height * lvl.width:
            raise DomainError(f"level data has {raw.size} values, expected {channels}x{lvl.height}x{lvl.width}")
        levels.append(lvl)
        grids.append(raw.reshape(channels, lvl.height, lvl.width))
    return PyramidSpec(tuple(levels)), tuple(grids)


def pyramid_from_json(doc: Dict[str, Any]) -> FeaturePyramid:
    spec, grids = _grids_from_json(doc)
    return FeaturePyramid(spec, grids)


def offsets_from_json(doc: Dict[str, Any]) -> OffsetField:
    """Offsets use the pyramid form with 3 channels (d0, d1, d2)."""
    _, grids = _grids_from_json(doc)
    return OffsetField(grids)
