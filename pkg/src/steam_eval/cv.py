"""K-fold cross-validated risk curve.

Each labeled unit gets its percentile score and calibrated weight from an
outcome model fitted without it. The held-out triples from all folds feed one
pooled risk curve, which is then projected onto the target using the
full-data percentiles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .density_ratio import CalibratedWeights
from .glm import Coefficients
from .risk import RiskCurve, build_risk_curve

MIN_FOLD_SIZE = 10


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    def __post_init__(self):
        a = np.array(self.assignments, dtype=np.int64)
        a.flags.writeable = False
        object.__setattr__(self, "assignments", a)
        sizes = np.bincount(a, minlength=self.k)
        if self.k < 2 or sizes.size != self.k or np.any(sizes == 0):
            raise ValueError("fold plan must use every one of k >= 2 folds")

    def held_out(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def training(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def make_fold_plan(y, k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded fold assignment, stratified by outcome.

    Units are shuffled within each class and dealt round-robin, continuing
    the deal across classes, so fold sizes differ by at most one.
    """
    y = np.asarray(y)
    n = y.size
    if k < 2:
        raise ValueError("need at least two folds")
    if n < k * MIN_FOLD_SIZE:
        raise ValueError(f"{n} labeled units cannot fill {k} folds of {MIN_FOLD_SIZE}")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(y == v)) for v in np.unique(y)])
    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = np.arange(n) % k
    return FoldPlan(k, assignments, seed)


@dataclass
class CvResult:
    """Held-out scores and weights plus the pooled risk curve.

    ``trained_on[k]`` lists the labeled units used to fit the outcome model
    that scored fold ``k``; ``fold_of[i]`` is unit ``i``'s fold.
    """

    plan: FoldPlan
    percentiles: np.ndarray
    weights: CalibratedWeights
    risk: RiskCurve
    h2: float
    betas: list
    trained_on: list

    def check_held_out(self) -> bool:
        return all(not np.isin(self.plan.held_out(k), t).any()
                   for k, t in enumerate(self.trained_on))


def cv_heldout(fit, plan: FoldPlan, *, refit: bool = True) -> CvResult:
    """Cross-validated risk curve for a :class:`~steam_eval.pipeline.PointFit`.

    ``refit=False`` reuses the full-data outcome model in every fold; the
    result then reproduces the in-sample curve.
    """
    from .pipeline import fit_outcome_model, risk_bandwidth, score_with_beta

    config = fit.config
    x = fit.outcome_data.labeled_x
    y = fit.data.y
    n = y.size
    P = np.empty(n)
    pi = np.empty(n)
    clips = fallbacks = 0
    betas, trained_on = [], []
    degenerate = 0
    for k in range(plan.k):
        test, train = plan.held_out(k), plan.training(k)
        if np.unique(y[train]).size < 2 or np.unique(y[test]).size < 2:
            degenerate += 1
            warnings.warn(f"fold {k} holds a single outcome class", RuntimeWarning,
                          stacklevel=2)
        if refit:
            beta_k = fit_outcome_model(x[train], y[train], config)
        else:
            beta_k = fit.beta
        scored = score_with_beta(beta_k, fit.scored.calibrator, fit.outcome_data, rows=test)
        P[test] = scored.labeled_percentiles
        pi[test] = scored.weights.pi
        clips += scored.weights.clip_count
        fallbacks += scored.weights.fallback_count
        betas.append(beta_k if isinstance(beta_k, Coefficients) else Coefficients(beta_k))
        trained_on.append(train if refit else np.arange(n))
    if degenerate == plan.k:
        raise ValueError("every fold holds a single outcome class")
    weights = CalibratedWeights.from_pi(pi, clips, fallbacks)
    h2 = risk_bandwidth(P, config)
    risk = build_risk_curve(P, y, weights, h2)
    return CvResult(plan, P, weights, risk, h2, betas, trained_on)


def cv_pipeline(data, config, validation=None):
    """Cross-validated estimates: returns (risk curve, STEAM report)."""
    from .pipeline import estimate

    if not config.use_cv:
        raise ValueError("config disables cross-validation")
    est = estimate(data, config, validation)
    return est.cv.risk, est.reports.get("steam")
