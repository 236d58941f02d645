"""
PseudoLab GMM thresholding

Per-class score banks feeding a two-component univariate Gaussian mixture.
The pseudo-label cutoff of a class is read from the posterior of the
positive (higher-mean) component over the banked scores.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp
from scipy.stats import norm

from ..errors import DegenerateError, DomainError

logger = logging.getLogger(__name__)

# Minimum component weight below which the fit is not trusted
MIN_WEIGHT = 0.01

RULES = ("argmax", "crossing")


class ScoreBank:
    """
    Fixed-capacity FIFO of confidence scores, one queue per class

    Owned by a single writer; fits run on snapshots.
    """

    def __init__(self, capacity: int = 200):
        if capacity < 1:
            raise DomainError(f"bank capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._queues: Dict[int, Deque[float]] = {}

    def push(self, class_id: int, scores: Sequence[float]) -> int:
        """
        Store the top round(sum(scores)) scores of a batch.

        Args:
            class_id: class the scores belong to
            scores: confidence scores in [0, 1]

        Returns:
            number of scores stored
        """
        values = np.asarray(scores, dtype=float)
        if values.size and (not np.all(np.isfinite(values)) or values.min() < 0 or values.max() > 1):
            raise DomainError("bank scores must lie in [0, 1]")
        k = math.floor(values.sum() + 0.5)
        if k == 0 and np.any(values > 0):
            k = 1
        if k == 0:
            return 0
        top = np.sort(values)[::-1][:k]
        queue = self._queues.setdefault(class_id, deque(maxlen=self.capacity))
        queue.extend(float(s) for s in top)
        return len(top)

    def snapshot(self, class_id: int) -> np.ndarray:
        return np.array(self._queues.get(class_id, ()), dtype=float)

    def classes(self) -> List[int]:
        return sorted(self._queues)

    def __len__(self) -> int:
        return sum(len(q) for q in self._queues.values())


def bank_push(bank: ScoreBank, class_id: int, scores: Sequence[float]) -> ScoreBank:
    bank.push(class_id, scores)
    return bank


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 100
    tol: float = 1e-6
    var_floor: float = 1e-4
    # Initialization is the deterministic median split; kept for config parity
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise DomainError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0 or self.var_floor <= 0:
            raise DomainError("tol must be >= 0 and var_floor > 0")


@dataclass(frozen=True)
class GmmFit:
    """
    Two-component mixture, components ordered so mu_n <= mu_p

    Attributes:
        history: log-likelihood after initialization and after every M-step
    """
    w_n: float
    w_p: float
    mu_n: float
    mu_p: float
    var_n: float
    var_p: float
    iterations: int
    log_likelihood: float
    history: Tuple[float, ...] = ()

    def to_dict(self) -> Dict[str, float]:
        return {
            "w_n": self.w_n, "w_p": self.w_p,
            "mu_n": self.mu_n, "mu_p": self.mu_p,
            "var_n": self.var_n, "var_p": self.var_p,
            "iterations": self.iterations,
            "log_likelihood": self.log_likelihood,
        }


def _log_joint(x: np.ndarray, w: np.ndarray, mu: np.ndarray, var: np.ndarray) -> np.ndarray:
    """(2, n) array of log w_k + log N(x; mu_k, var_k)."""
    with np.errstate(divide="ignore"):
        log_w = np.log(w)
    return log_w[:, None] + norm.logpdf(x[None, :], mu[:, None], np.sqrt(var)[:, None])


def em_fit(samples: Sequence[float], config: EmConfig = EmConfig()) -> GmmFit:
    """
    Fit a two-component 1-D Gaussian mixture with EM.

    The sorted samples are split at the median (lower half negative) to
    initialize; iteration stops when the log-likelihood gains less than tol.

    Raises:
        DegenerateError: fewer than 2 distinct samples
    """
    x = np.sort(np.asarray(samples, dtype=float))
    if np.unique(x).size < 2:
        raise DegenerateError("EM needs at least 2 distinct samples")

    n = x.size
    half = n // 2
    parts = (x[:half], x[half:])
    w = np.array([p.size / n for p in parts])
    mu = np.array([p.mean() for p in parts])
    var = np.maximum([p.var() for p in parts], config.var_floor)

    ll = float(logsumexp(_log_joint(x, w, mu, var), axis=0).sum())
    history = [ll]
    iterations = 0
    for it in range(1, config.max_iters + 1):
        joint = _log_joint(x, w, mu, var)
        resp = np.exp(joint - logsumexp(joint, axis=0))
        nk = resp.sum(axis=1)
        if np.any(nk < 1e-12):
            logger.debug("EM component vanished at iteration %d", it)
            break
        mu = resp @ x / nk
        var = np.maximum((resp * (x[None, :] - mu[:, None]) ** 2).sum(axis=1) / nk, config.var_floor)
        w = nk / n

        new_ll = float(logsumexp(_log_joint(x, w, mu, var), axis=0).sum())
        history.append(new_ll)
        iterations = it
        gain = new_ll - ll
        ll = new_ll
        if gain < config.tol:
            break

    if mu[0] > mu[1]:
        w, mu, var = w[::-1], mu[::-1], var[::-1]
    return GmmFit(
        w_n=float(w[0]), w_p=float(w[1]),
        mu_n=float(mu[0]), mu_p=float(mu[1]),
        var_n=float(var[0]), var_p=float(var[1]),
        iterations=iterations,
        log_likelihood=ll,
        history=tuple(history),
    )


def log_odds_positive(fit: GmmFit, s: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """log P(pos | s) - log P(neg | s); does not saturate like the posterior."""
    x = np.atleast_1d(np.asarray(s, dtype=float))
    joint = _log_joint(
        x,
        np.array([fit.w_n, fit.w_p]),
        np.array([fit.mu_n, fit.mu_p]),
        np.array([fit.var_n, fit.var_p]),
    )
    out = joint[1] - joint[0]
    return float(out[0]) if np.ndim(s) == 0 else out


def posterior_positive(fit: GmmFit, s: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """w_p N(s; mu_p, var_p) / (w_n N(s; mu_n, var_n) + w_p N(s; mu_p, var_p))"""
    out = expit(log_odds_positive(fit, s))
    return float(out) if np.ndim(s) == 0 else out


class ThresholdSource(Enum):
    GMM = "gmm"
    FALLBACK = "fallback"


@dataclass(frozen=True)
class ThresholdDecision:
    tau: float
    source: ThresholdSource

    def to_dict(self) -> Dict[str, object]:
        return {"tau": self.tau, "source": self.source.value}


def adaptive_threshold(
    fit: Optional[GmmFit],
    samples: Sequence[float],
    fallback_tau: float = 0.4,
    rule: str = "argmax",
) -> ThresholdDecision:
    """
    Pick the cutoff among the bank samples.

    Args:
        fit: mixture fitted on samples; None when the fit was degenerate
        samples: bank contents the fit was computed from
        fallback_tau: returned when the fit cannot be trusted
        rule: "argmax" - smallest sample maximizing the positive posterior;
              "crossing" - smallest sample whose posterior reaches 0.5

    Returns:
        ThresholdDecision whose tau is a sample value or fallback_tau
    """
    if rule not in RULES:
        raise DomainError(f"unknown threshold rule: {rule}")
    fallback = ThresholdDecision(float(fallback_tau), ThresholdSource.FALLBACK)
    x = np.asarray(samples, dtype=float)
    if fit is None or x.size == 0 or min(fit.w_n, fit.w_p) < MIN_WEIGHT:
        return fallback

    odds = np.atleast_1d(log_odds_positive(fit, x))
    if rule == "argmax":
        chosen = x[odds == odds.max()]
    else:
        chosen = x[odds >= 0]
        if chosen.size == 0:
            return fallback
    return ThresholdDecision(float(chosen.min()), ThresholdSource.GMM)


def threshold_from_samples(
    samples: Sequence[float],
    config: EmConfig = EmConfig(),
    fallback_tau: float = 0.4,
    rule: str = "argmax",
) -> ThresholdDecision:
    """Fit and threshold in one call; degenerate banks take the fallback."""
    try:
        fit = em_fit(samples, config) if len(samples) else None
    except DegenerateError:
        fit = None
    decision = adaptive_threshold(fit, samples, fallback_tau, rule)
    if decision.source is ThresholdSource.FALLBACK:
        logger.info("GMM threshold fell back to %.3f (%d samples)", decision.tau, len(samples))
    return decision
