"""End-to-end point estimation: model fits, calibrated weights, risk curve,
projection to the target and the comparator estimators."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import accuracy as acc
from . import glm
from .data import BasisExpansion, StudyData, ValidationLabels, expand_basis
from .density_ratio import (PI_MIN, CalibratedWeights, PiCalibrator, calibrate_pi,
                            calibrated_weights, fit_selection_model)
from .glm import Coefficients
from .risk import RiskCurve, build_risk_curve, check_undersmoothing, default_h2
from .scores import EcdfEvaluator, ecdf_and_target_percentiles

ALL_METHODS = tuple(m.value for m in acc.Method)


@dataclass(frozen=True)
class SteamConfig:
    """Tuning knobs for one estimation run.

    Attributes
    ----------
    gamma : float
        Adaptive LASSO power for both working models.
    n_lambda, lambda_min_ratio : int, float
        Size and depth of the BIC penalty grid.
    h1 : (float, float) or None
        Fixed calibration bandwidths; ``None`` uses the plug-in rule scaled
        by ``h1_mult``.
    h2 : float or None
        Fixed risk-curve bandwidth; ``None`` uses ``n**-nu2 * SD`` scaled by
        ``h2_mult``.
    folds : int
        Cross-validation folds; 0 or 1 disables cross-validation.
    """

    gamma: float = 1.0
    n_lambda: int = 50
    lambda_min_ratio: float = 1e-4
    h1: tuple[float, float] | None = None
    h1_mult: float = 1.0
    h2: float | None = None
    h2_mult: float = 1.0
    nu2: float = 0.4
    pi_min: float = PI_MIN
    folds: int = 5
    seed: int = 0
    u0s: tuple[float, ...] = acc.DEFAULT_U0
    mu_basis: BasisExpansion = field(default_factory=BasisExpansion)
    pi_basis: BasisExpansion = field(default_factory=BasisExpansion)
    methods: tuple[str, ...] = ALL_METHODS

    def __post_init__(self):
        check_undersmoothing(self.nu2)
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if not all(0 < u < 1 for u in self.u0s):
            raise ValueError("u0 values must lie in (0, 1)")

    @property
    def use_cv(self) -> bool:
        return self.folds >= 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mu_basis"] = self.mu_basis.to_dict()
        d["pi_basis"] = self.pi_basis.to_dict()
        d["h1"] = None if self.h1 is None else list(self.h1)
        d["u0s"] = list(self.u0s)
        d["methods"] = list(self.methods)
        return d


def fit_outcome_model(x, y, config: SteamConfig, obs_weights=None) -> Coefficients:
    return glm.fit_adaptive_lasso(x, y, obs_weights, config.gamma,
                                  n_lambda=config.n_lambda, min_ratio=config.lambda_min_ratio)


def risk_bandwidth(percentiles, config: SteamConfig) -> float:
    if config.h2 is not None:
        return float(config.h2)
    return default_h2(percentiles, config.nu2, config.h2_mult)


@dataclass
class ScoredFit:
    """Quantities that depend on one outcome coefficient vector."""

    beta: Coefficients
    calibrator: PiCalibrator
    weights: CalibratedWeights
    ecdf: EcdfEvaluator
    labeled_percentiles: np.ndarray
    target_percentiles: np.ndarray


def score_with_beta(beta, base: PiCalibrator, outcome_data: StudyData, rows=None) -> ScoredFit:
    """Recalibrate weights and recompute percentiles for ``beta``.

    ``rows`` restricts the labeled units that get weights and percentiles.
    """
    cal = base.with_beta(beta)
    xa, xb = cal.labeled_inputs()
    if rows is not None:
        xa, xb = xa[rows], xb[rows]
    weights = calibrated_weights(cal, xa, xb)
    b = beta.values if isinstance(beta, Coefficients) else np.asarray(beta, dtype=float)
    raw_t = outcome_data.target_x @ b
    ecdf, P_T = ecdf_and_target_percentiles(raw_t)
    return ScoredFit(beta, cal, weights, ecdf, ecdf(xb @ b), P_T)


@dataclass
class PointFit:
    """Full-data fit shared by point estimation, CV and resampling."""

    config: SteamConfig
    data: StudyData
    outcome_data: StudyData
    selection_data: StudyData
    alpha: Coefficients
    scored: ScoredFit
    h2: float
    risk: RiskCurve

    @property
    def beta(self) -> Coefficients:
        return self.scored.beta


def fit_point(data: StudyData, config: SteamConfig) -> PointFit:
    """Fit both working models and the in-sample calibrated risk curve."""
    outcome_data = expand_basis(data, config.mu_basis)
    selection_data = expand_basis(data, config.pi_basis)
    beta = fit_outcome_model(outcome_data.labeled_x, data.y, config)
    alpha = fit_selection_model(selection_data, None, gamma=config.gamma)
    base = calibrate_pi(alpha, beta, selection_data, outcome_data, h1=config.h1,
                        h1_mult=config.h1_mult, pi_min=config.pi_min)
    scored = score_with_beta(beta, base, outcome_data)
    h2 = risk_bandwidth(scored.labeled_percentiles, config)
    risk = build_risk_curve(scored.labeled_percentiles, data.y, scored.weights, h2)
    return PointFit(config, data, outcome_data, selection_data, alpha, scored, h2, risk)


@dataclass
class Estimates:
    """Per-method accuracy reports plus the fitted pieces behind them."""

    reports: dict
    fit: PointFit
    cv: object = None
    failures: dict = field(default_factory=dict)


def _validation_percentiles(fit: PointFit, validation: ValidationLabels):
    return fit.scored.target_percentiles[validation.index], validation.y


def estimate(data: StudyData, config: SteamConfig | None = None,
             validation: ValidationLabels | None = None, *, fit: PointFit | None = None,
             strict: bool = True) -> Estimates:
    """Point estimates for every configured method.

    With cross-validation on, STEAM uses the pooled held-out risk curve and the
    labeled-sample comparators use held-out percentiles and weights. With
    ``strict=False`` a failing method is recorded in ``failures`` instead of
    raising.
    """
    config = config or SteamConfig()
    fit = fit or fit_point(data, config)
    cv = None
    if config.use_cv:
        from .cv import cv_heldout, make_fold_plan
        cv = cv_heldout(fit, make_fold_plan(data.y, config.folds, config.seed))
        P_L, w, risk = cv.percentiles, cv.weights, cv.risk
    else:
        P_L, w, risk = fit.scored.labeled_percentiles, fit.scored.weights, fit.risk
    P_T = fit.scored.target_percentiles
    diag = {"clip_count": int(w.clip_count), "pi_fallback_count": int(w.fallback_count)}
    u0s = config.u0s
    builders = {
        "steam": lambda: acc.steam_report(
            P_T, risk, u0s, {**diag, "risk_fallback_count": risk.fallback_count}),
        "weighted": lambda: acc.comparator_weighted(P_L, data.y, w, u0s, diagnostics=diag),
        "dr_aug": lambda: acc.comparator_dr_aug(P_L, data.y, w, P_T, risk, u0s,
                                                diagnostics=diag),
        "source": lambda: acc.comparator_source(P_L, data.y, u0s),
    }
    if validation is not None and len(validation):
        builders["target_labeled"] = lambda: acc.comparator_target_labeled(
            *_validation_percentiles(fit, validation), u0s)
    reports, failures = {}, {}
    for name in config.methods:
        if name not in builders:
            failures[name] = "no validation labels"
            continue
        try:
            reports[name] = builders[name]()
        except (ValueError, ArithmeticError) as exc:
            if strict:
                raise
            failures[name] = str(exc)
    return Estimates(reports, fit, cv, failures)
