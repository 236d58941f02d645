"""
PseudoLab assignment scenes

Synthetic single-image scenes for assignment experiments: pyramid
anchors, random GT boxes and dense teacher predictions whose class
confidence grows with the anchor's overlap with the GT that contains its
centre. Also the pooled A-IOU sweeps over scene suites.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..analysis.assign import Assigner, Scene, aiou_trial_values
from ..analysis.pyramid import PyramidSpec, generate_anchors
from ..config import worker_count
from ..core.geom import BBox, NoiseModel, boxes_to_array, iou_matrix, perturb
from ..core.records import GroundTruth, Prediction
from ..errors import DomainError

logger = logging.getLogger(__name__)

# Confidence of anchors that do not lie on any object
BACKGROUND_PROB = 0.05


@dataclass(frozen=True)
class SceneConfig:
    """
    Attributes:
        image_size: square image side in pixels
        strides: pyramid strides, finest first
        anchor_scale: anchor side as a multiple of the stride
        n_gts: GT boxes per scene
        min_size, max_size: GT side range in pixels
        pred_noise: noise ratio of the predicted boxes around their GT
        prob_noise: std of the Gaussian jitter on class confidence
    """
    image_size: int = 128
    strides: Tuple[int, ...] = (8, 16, 32)
    anchor_scale: float = 4.0
    n_gts: int = 10
    n_classes: int = 1
    min_size: float = 32.0
    max_size: float = 80.0
    pred_noise: float = 0.0
    prob_noise: float = 0.05

    def __post_init__(self) -> None:
        if self.n_gts < 0 or self.n_classes < 1:
            raise DomainError("n_gts must be >= 0 and n_classes >= 1")
        if not 0 < self.min_size <= self.max_size <= self.image_size:
            raise DomainError(f"GT sizes must satisfy 0 < min <= max <= image size: {self}")

    @property
    def pyramid(self) -> PyramidSpec:
        base = self.strides[0]
        side = -(-self.image_size // base)
        return PyramidSpec.build(base, side, side, len(self.strides), (self.anchor_scale,), (1.0,))


def make_scene(config: SceneConfig = SceneConfig(), seed: int = 0, index: int = 0) -> Scene:
    """One scene drawn from the stream (seed, index)."""
    rng = np.random.default_rng([seed, index])
    size = config.image_size
    gts = []
    for _ in range(config.n_gts):
        w, h = rng.uniform(config.min_size, config.max_size, size=2)
        x1, y1 = rng.uniform(0, size - w), rng.uniform(0, size - h)
        gts.append(GroundTruth(BBox(x1, y1, x1 + w, y1 + h), int(rng.integers(config.n_classes))))

    anchors = generate_anchors(config.pyramid)
    anchor_boxes = boxes_to_array(a.bbox for a in anchors)
    gt_boxes = boxes_to_array(g.bbox for g in gts)
    overlaps = iou_matrix(anchor_boxes, gt_boxes)
    centers = (anchor_boxes[:, :2] + anchor_boxes[:, 2:]) / 2
    inside = (
        (centers[:, None, 0] > gt_boxes[None, :, 0])
        & (centers[:, None, 0] < gt_boxes[None, :, 2])
        & (centers[:, None, 1] > gt_boxes[None, :, 1])
        & (centers[:, None, 1] < gt_boxes[None, :, 3])
    )
    noise = NoiseModel.derived(config.pred_noise, seed, index, 1)

    predictions = []
    for i, anchor in enumerate(anchors):
        probs = [BACKGROUND_PROB] * config.n_classes
        bbox = anchor.bbox
        if gts and inside[i].any():
            j = int(np.argmax(np.where(inside[i], overlaps[i], -1.0)))
            jitter = rng.normal(0.0, config.prob_noise)
            probs[gts[j].class_id] = float(np.clip(BACKGROUND_PROB + 0.9 * overlaps[i, j] + jitter, 0.0, 1.0))
            bbox = perturb(gts[j].bbox, noise)
        predictions.append(Prediction(i, tuple(probs), bbox))
    return Scene(tuple(anchors), tuple(predictions), tuple(gts))


def make_scene_suite(config: SceneConfig = SceneConfig(), n: int = 100, seed: int = 7) -> List[Scene]:
    return [make_scene(config, seed, i) for i in range(n)]


@dataclass(frozen=True)
class SweepRow:
    assigner: str
    rho: float
    mean_aiou: float
    std_aiou: float
    samples: int


def aiou_sweep(
    scenes: Sequence[Scene],
    assigners: Dict[str, Assigner],
    rhos: Sequence[float],
    trials: int = 100,
    seed: int = 0,
    threads: Optional[int] = None,
) -> List[SweepRow]:
    """
    A-IOU pooled over a scene suite

    Every assigner sees the same noisy GTs: trial t of scene s at rho r uses
    the stream (seed, s, r, t).

    Returns:
        rows ordered by assigner (input order), then rho
    """
    names = list(assigners)
    tasks = [(name, s) for name in names for s in range(len(scenes))]

    def run(task: Tuple[str, int]) -> np.ndarray:
        name, s = task
        assigner = assigners[name]
        scene = scenes[s]
        clean = assigner(scene.anchors, scene.predictions, scene.gts)
        return np.stack([
            aiou_trial_values(scene, assigner, rho, r, trials, seed, stream=(s,), clean=clean)
            for r, rho in enumerate(rhos)
        ])

    workers = worker_count(threads)
    if workers <= 1:
        results = [run(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tasks))

    rows = []
    for k, name in enumerate(names):
        pooled = np.concatenate(results[k * len(scenes):(k + 1) * len(scenes)], axis=1)
        for r, rho in enumerate(rhos):
            values = pooled[r]
            rows.append(SweepRow(name, float(rho), float(values.mean()), float(values.std()), values.size))
    return rows


@dataclass(frozen=True)
class CurveRow:
    pred_noise: float
    assigner: str
    mean_aiou: float
    std_aiou: float


def aiou_training_curve(
    config: SceneConfig,
    pred_noises: Sequence[float],
    assigners: Dict[str, Assigner],
    rho: float = 0.1,
    n_scenes: int = 20,
    trials: int = 20,
    seed: int = 0,
    threads: Optional[int] = None,
) -> List[CurveRow]:
    """
    A-IOU at a fixed GT noise ratio while teacher box quality improves

    Each entry of pred_noises stands for a stage of training, from a poor
    regressor (large noise) to a good one.
    """
    rows = []
    for pred_noise in pred_noises:
        suite = make_scene_suite(replace(config, pred_noise=pred_noise), n_scenes, seed)
        for sweep in aiou_sweep(suite, assigners, [rho], trials, seed, threads):
            rows.append(CurveRow(float(pred_noise), sweep.assigner, sweep.mean_aiou, sweep.std_aiou))
    return rows
