"""
PseudoLab synthetic teacher

A fixed synthetic world of GT boxes and a teacher whose skill follows a
step-indexed schedule: true boxes come back with Gaussian scores and
coordinate noise, false detections arrive at a Poisson rate. Parameters of
the teacher network are abstracted to a short vector updated by EMA.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..config import worker_count
from ..core.geom import BBox, NoiseModel, perturb
from ..core.records import Detection, GroundTruth, ImageAnnotations, ImageDetections
from ..errors import DomainError

logger = logging.getLogger(__name__)

# Stream tags keeping world layout, emissions and the student walk apart
WORLD_STREAM = 0
EMIT_STREAM = 1
STUDENT_STREAM = 2


@dataclass(frozen=True)
class WorldConfig:
    n_images: int = 8
    boxes_per_image: int = 4
    n_classes: int = 2
    image_size: Tuple[int, int] = (256, 256)
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.n_images, self.boxes_per_image, self.n_classes, *self.image_size) < 1:
            raise DomainError(f"world sizes must be positive: {self}")


def generate_world(config: WorldConfig) -> List[ImageAnnotations]:
    """GT layout of every image; box sides span 1/16 to 1/4 of the image."""
    rng = np.random.default_rng([config.seed, WORLD_STREAM])
    width, height = config.image_size
    images = []
    for image_id in range(config.n_images):
        gts = []
        for _ in range(config.boxes_per_image):
            w = rng.uniform(width / 16, width / 4)
            h = rng.uniform(height / 16, height / 4)
            x1 = rng.uniform(0, width - w)
            y1 = rng.uniform(0, height - h)
            gts.append(GroundTruth(BBox(x1, y1, x1 + w, y1 + h), int(rng.integers(config.n_classes))))
        images.append(ImageAnnotations(image_id, tuple(gts)))
    return images


@dataclass(frozen=True)
class SkillPoint:
    """Teacher behaviour at one step."""
    pos_mean: float
    pos_std: float
    neg_rate: float
    rho: float

    def __post_init__(self) -> None:
        values = (self.pos_mean, self.pos_std, self.neg_rate, self.rho)
        if not all(np.isfinite(v) for v in values):
            raise DomainError(f"skill values must be finite: {values}")
        if not 0 < self.pos_mean < 1:
            raise DomainError(f"pos_mean must lie in (0, 1), got {self.pos_mean}")
        if self.pos_std < 0 or self.neg_rate < 0 or self.rho < 0:
            raise DomainError(f"pos_std, neg_rate and rho must be >= 0: {values}")


@dataclass(frozen=True)
class TeacherSkill:
    """
    Linear schedule between a start and an end skill over `horizon` steps

    Confidence on true boxes rises while false detections and box noise fall,
    the teacher growing more confident as training proceeds.
    """
    pos_mean_start: float = 0.3
    pos_mean_end: float = 0.9
    pos_std: float = 0.05
    neg_rate_start: float = 20.0
    neg_rate_end: float = 5.0
    rho_start: float = 0.1
    rho_end: float = 0.02
    horizon: int = 500

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise DomainError(f"horizon must be >= 1, got {self.horizon}")
        self.at(0)
        self.at(self.horizon)

    @classmethod
    def constant(cls, pos_mean: float, pos_std: float = 0.0, neg_rate: float = 0.0, rho: float = 0.0) -> "TeacherSkill":
        return cls(pos_mean, pos_mean, pos_std, neg_rate, neg_rate, rho, rho, 1)

    def at(self, step: int) -> SkillPoint:
        f = min(max(step / max(self.horizon - 1, 1), 0.0), 1.0)
        lerp = lambda a, b: a + (b - a) * f  # noqa: E731
        return SkillPoint(
            pos_mean=lerp(self.pos_mean_start, self.pos_mean_end),
            pos_std=self.pos_std,
            neg_rate=lerp(self.neg_rate_start, self.neg_rate_end),
            rho=lerp(self.rho_start, self.rho_end),
        )


def _emit_image(
    ann: ImageAnnotations,
    config: WorldConfig,
    point: SkillPoint,
    seed: int,
    step: int,
) -> ImageDetections:
    noise = NoiseModel.derived(point.rho, seed, EMIT_STREAM, step, ann.image_id)
    rng = noise.rng
    dets: List[Detection] = []
    for gt in ann.gts:
        bbox = perturb(gt.bbox, noise)
        score = float(np.clip(rng.normal(point.pos_mean, point.pos_std), 0.0, 1.0))
        dets.append(Detection(bbox, gt.class_id, score))

    width, height = config.image_size
    for _ in range(int(rng.poisson(point.neg_rate))):
        w = rng.uniform(width / 16, width / 4)
        h = rng.uniform(height / 16, height / 4)
        x1 = rng.uniform(0, width - w)
        y1 = rng.uniform(0, height - h)
        class_id = int(rng.integers(config.n_classes))
        score = float(np.clip(rng.normal(0.5 * point.pos_mean, point.pos_std), 0.0, 1.0))
        dets.append(Detection(BBox(x1, y1, x1 + w, y1 + h), class_id, score))
    return ImageDetections(ann.image_id, tuple(dets))


def teacher_emit(
    world: Sequence[ImageAnnotations],
    config: WorldConfig,
    point: SkillPoint,
    seed: int,
    step: int,
    threads: Optional[int] = 1,
) -> List[ImageDetections]:
    """
    Teacher detections for every image at one step

    Each image draws from its own stream (seed, step, image_id), so the
    output is the same for any number of threads.
    """
    workers = min(worker_count(threads), len(world))
    if workers <= 1:
        return [_emit_image(ann, config, point, seed, step) for ann in world]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ann: _emit_image(ann, config, point, seed, step), world))


# ---------------- EMA ----------------

@dataclass(frozen=True)
class EmaState:
    """
    Teacher / student parameter vectors

    Attributes:
        momentum: weight kept on the teacher at every update
    """
    teacher: Tuple[float, ...]
    student: Tuple[float, ...]
    momentum: float = 0.9995

    def __post_init__(self) -> None:
        if not 0 <= self.momentum <= 1:
            raise DomainError(f"momentum must lie in [0, 1], got {self.momentum}")
        if len(self.teacher) != len(self.student):
            raise DomainError(f"teacher has {len(self.teacher)} parameters, student {len(self.student)}")

    @classmethod
    def zeros(cls, dim: int = 8, momentum: float = 0.9995) -> "EmaState":
        return cls((0.0,) * dim, (0.0,) * dim, momentum)

    @property
    def gap(self) -> float:
        return float(np.linalg.norm(np.subtract(self.teacher, self.student)))


def ema_update(state: EmaState) -> EmaState:
    """teacher <- m * teacher + (1 - m) * student"""
    m = state.momentum
    teacher = m * np.asarray(state.teacher, dtype=float) + (1 - m) * np.asarray(state.student, dtype=float)
    return replace(state, teacher=tuple(float(v) for v in teacher))


def student_step(state: EmaState, rng: np.random.Generator, scale: float = 0.01) -> EmaState:
    """Random-walk stand-in for one optimizer step of the student."""
    student = np.asarray(state.student, dtype=float) + scale * rng.standard_normal(len(state.student))
    return replace(state, student=tuple(float(v) for v in student))
