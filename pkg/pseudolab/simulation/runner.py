"""
PseudoLab schedule runner

Drives the synthetic teacher through a training run under a pseudo-label
threshold schedule (fixed cutoff or per-class GMM) and records per-step
thresholds, pseudo-label counts, the EMA gap and the accumulated
checkpoint inconsistency.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..analysis.evaluation import DEFAULT_GT_CUTOFF, pairwise_inconsistency
from ..analysis.gmm import EmConfig, ScoreBank, threshold_from_samples
from ..config import worker_count
from ..core.records import ImageDetections
from ..errors import DomainError
from .teacher import STUDENT_STREAM, EmaState, TeacherSkill, WorldConfig, ema_update, generate_world, student_step, teacher_emit

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FixedSchedule:
    tau: float = 0.4
    name: str = "fixed"

    def __post_init__(self) -> None:
        if not 0 <= self.tau <= 1:
            raise DomainError(f"fixed threshold must lie in [0, 1], got {self.tau}")


@dataclass(frozen=True)
class GmmSchedule:
    """
    Per-class GMM thresholds refreshed every step

    The crossing rule is the default here: with argmax the cutoff sits at
    the bank maximum and almost nothing survives.
    """
    capacity: int = 200
    em: EmConfig = field(default_factory=EmConfig)
    fallback_tau: float = 0.4
    rule: str = "crossing"
    name: str = "gmm"


Schedule = Union[FixedSchedule, GmmSchedule]


@dataclass(frozen=True)
class StepRecord:
    step: int
    taus: Tuple[float, ...]
    pseudo_per_image: float
    inconsistency_cum: float
    ema_gap: float


@dataclass(frozen=True)
class RunMetrics:
    """
    Attributes:
        schedule: schedule name
        records: one StepRecord per step
        checkpoints: number of checkpoints taken
        inconsistency_defined: False when fewer than 2 checkpoints were taken
    """
    schedule: str
    records: Tuple[StepRecord, ...]
    checkpoints: int
    inconsistency_defined: bool

    @property
    def pseudo_counts(self) -> np.ndarray:
        return np.array([r.pseudo_per_image for r in self.records])

    @property
    def tau_trajectory(self) -> np.ndarray:
        """Class-averaged threshold per step."""
        return np.array([float(np.mean(r.taus)) for r in self.records])

    def tau_moving_average(self, window: int = 50) -> np.ndarray:
        """Trailing mean of the class-averaged threshold over `window` steps."""
        if window < 1:
            raise DomainError(f"window must be >= 1, got {window}")
        taus = self.tau_trajectory
        if taus.size < window:
            return np.array([])
        return np.convolve(taus, np.ones(window) / window, mode="valid")

    @property
    def final_inconsistency(self) -> float:
        return self.records[-1].inconsistency_cum if self.records else 0.0

    def to_rows(self) -> List[Tuple[int, int, float, float, float]]:
        """(step, class_id, tau, pseudo_per_image, inconsistency_cum) rows."""
        return [
            (r.step, c, tau, r.pseudo_per_image, r.inconsistency_cum)
            for r in self.records
            for c, tau in enumerate(r.taus)
        ]


@dataclass(frozen=True)
class SummaryRow:
    schedule: str
    mean_pseudo: float
    cv_pseudo: float
    final_inconsistency: float
    inconsistency_defined: bool

    @classmethod
    def from_metrics(cls, metrics: RunMetrics) -> "SummaryRow":
        counts = metrics.pseudo_counts
        mean = float(counts.mean()) if counts.size else 0.0
        cv = float(counts.std() / mean) if mean > 0 else 0.0
        return cls(metrics.schedule, mean, cv, metrics.final_inconsistency, metrics.inconsistency_defined)


def _class_taus(
    schedule: Schedule,
    dets: Sequence[ImageDetections],
    n_classes: int,
    bank: Optional[ScoreBank],
) -> Tuple[float, ...]:
    if isinstance(schedule, FixedSchedule):
        return (schedule.tau,) * n_classes
    taus = []
    for c in range(n_classes):
        bank.push(c, [d.score for img in dets for d in img.detections if d.class_id == c])
        decision = threshold_from_samples(bank.snapshot(c), schedule.em, schedule.fallback_tau, schedule.rule)
        taus.append(decision.tau)
    return tuple(taus)


def run_schedule(
    world: WorldConfig,
    skill: TeacherSkill,
    schedule: Schedule,
    steps: int = 500,
    checkpoint_every: int = 50,
    seed: int = 0,
    gt_cutoff: float = DEFAULT_GT_CUTOFF,
    ema_momentum: float = 0.9995,
    threads: Optional[int] = 1,
) -> RunMetrics:
    """
    Simulate one training run under a threshold schedule.

    A checkpoint is taken after every checkpoint_every steps; each new
    checkpoint adds 1 - mAP against the previous one to the running
    inconsistency.
    """
    if not steps >= checkpoint_every >= 1:
        raise DomainError(f"need steps >= checkpoint_every >= 1, got {steps} and {checkpoint_every}")
    images = generate_world(world)
    bank = ScoreBank(schedule.capacity) if isinstance(schedule, GmmSchedule) else None
    ema = EmaState.zeros(momentum=ema_momentum)
    student_rng = np.random.default_rng([seed, STUDENT_STREAM])

    records: List[StepRecord] = []
    previous: Optional[List[ImageDetections]] = None
    checkpoints = 0
    inconsistency_cum = 0.0
    for step in range(steps):
        dets = teacher_emit(images, world, skill.at(step), seed, step, threads)
        taus = _class_taus(schedule, dets, world.n_classes, bank)
        filtered = [
            ImageDetections(img.image_id, tuple(d for d in img.detections if d.score >= taus[d.class_id]))
            for img in dets
        ]
        pseudo = sum(len(img.detections) for img in filtered) / len(filtered)

        ema = ema_update(student_step(ema, student_rng))

        if (step + 1) % checkpoint_every == 0:
            checkpoints += 1
            if previous is not None:
                inconsistency_cum += pairwise_inconsistency(previous, filtered, gt_cutoff)
            previous = filtered

        records.append(StepRecord(step, taus, pseudo, inconsistency_cum, ema.gap))

    logger.info(
        "schedule %s: %d steps, %d checkpoints, inconsistency %.4f",
        schedule.name, steps, checkpoints, inconsistency_cum,
    )
    return RunMetrics(schedule.name, tuple(records), checkpoints, checkpoints >= 2)


def compare_schedules(
    world: WorldConfig,
    skill: TeacherSkill,
    schedules: Sequence[Schedule],
    steps: int = 500,
    checkpoint_every: int = 50,
    seed: int = 0,
    gt_cutoff: float = DEFAULT_GT_CUTOFF,
    ema_momentum: float = 0.9995,
    threads: Optional[int] = None,
) -> Tuple[List[RunMetrics], List[SummaryRow]]:
    """
    Run every schedule on the same teacher stream.

    Returns:
        (metrics per schedule, summary row per schedule), in input order
    """
    if len(schedules) < 2:
        raise DomainError("compare_schedules needs at least 2 schedules")

    def run(schedule: Schedule) -> RunMetrics:
        return run_schedule(world, skill, schedule, steps, checkpoint_every, seed, gt_cutoff, ema_momentum, threads=1)

    workers = min(worker_count(threads), len(schedules))
    if workers <= 1:
        metrics = [run(s) for s in schedules]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            metrics = list(pool.map(run, schedules))
    return metrics, [SummaryRow.from_metrics(m) for m in metrics]
