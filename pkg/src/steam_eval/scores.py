"""Linear risk scores, the target-population percentile transform and the
normal probability-integral transform applied before kernel smoothing."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .glm import Coefficients


class Population(enum.Enum):
    LABELED_SOURCE = "labeled_source"
    UNLABELED_SOURCE = "unlabeled_source"
    TARGET = "target"


def _coef_values(beta) -> np.ndarray:
    return beta.values if isinstance(beta, Coefficients) else np.asarray(beta, dtype=float)


class EcdfEvaluator:
    """``t -> #{target scores <= t} / N_t`` by binary search."""

    def __init__(self, scores):
        s = np.sort(np.asarray(scores, dtype=float))
        if s.size == 0:
            raise ValueError("empty target sample")
        s.flags.writeable = False
        self.sorted_scores = s

    @property
    def size(self) -> int:
        return self.sorted_scores.size

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.searchsorted(self.sorted_scores, t, side="right") / self.size


def target_ecdf(beta, target_x) -> EcdfEvaluator:
    return EcdfEvaluator(np.asarray(target_x, dtype=float) @ _coef_values(beta))


@dataclass(frozen=True)
class ScoreSet:
    raw: np.ndarray
    percentile: np.ndarray
    population: Population


def percentile_scores(beta, cohort_x, ecdf: EcdfEvaluator,
                      population: Population = Population.LABELED_SOURCE) -> ScoreSet:
    coef = _coef_values(beta)
    cohort_x = np.asarray(cohort_x, dtype=float)
    if cohort_x.shape[1] != coef.size:
        raise ValueError("cohort columns do not match coefficient length")
    raw = cohort_x @ coef
    return ScoreSet(raw=raw, percentile=ecdf(raw), population=population)


def ecdf_and_target_percentiles(raw_target) -> tuple[EcdfEvaluator, np.ndarray]:
    """Evaluator and the target's own percentiles from a single sort."""
    ecdf = EcdfEvaluator(raw_target)
    return ecdf, ecdf(raw_target)


def target_percentiles(raw_target) -> np.ndarray:
    """Percentiles of the target sample under its own ECDF (ties share the max rank)."""
    raw_target = np.asarray(raw_target, dtype=float)
    s = np.sort(raw_target)
    return np.searchsorted(s, raw_target, side="right") / s.size


def pit_standardize(v, mean: float | None = None, sd: float | None = None) -> np.ndarray:
    """``Phi((v - mean) / sd)``; mean and sample SD default to those of ``v``."""
    v = np.asarray(v, dtype=float)
    if mean is None:
        mean = float(np.mean(v))
    if sd is None:
        sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    if not sd > 0:
        raise ValueError("degenerate score: zero standard deviation")
    return ndtr((v - mean) / sd)
