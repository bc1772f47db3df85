"""Perturbation resampling for standard errors, confidence intervals and ROC bands.

Every draw reweights the labeled units by iid ``G ~ 4 Beta(0.5, 1.5)``
(mean 1, variance 1), refits the outcome model at the frozen penalty with
re-anchored adaptive weights, recomputes the calibrated weights and the
risk curve (with ``G`` multiplying the weights) and reruns the projection.
The selection model is held fixed. The exact variant re-smooths the
calibrated probabilities at every draw; the approximate variant moves them
along their analytic gradient in the outcome coefficients.
"""

from __future__ import annotations

import multiprocessing as mp
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import glm
from .accuracy import roc_at, steam_report
from .density_ratio import CalibratedWeights
from .risk import RiskCurve
from .scores import ecdf_and_target_percentiles

VARIANTS = ("exact", "approx")
MAX_FAIL_SHARE = 0.05
MIN_DRAWS_FOR_CI = 100
BAND_FPR = np.linspace(0.0, 1.0, 101)


def draw_perturbation_weights(count, rng) -> np.ndarray:
    """iid ``4 * Beta(0.5, 1.5)`` draws; ``count`` may be an int or a shape."""
    if np.prod(count) < 1:
        raise ValueError("count must be at least 1")
    return 4.0 * rng.beta(0.5, 1.5, size=count)


@dataclass(frozen=True)
class PerturbationDraws:
    """Successful draws of every reported scalar plus the pointwise ROC.

    ``draws`` is ``(successful, len(names))``; ``roc`` is ``(successful,
    len(BAND_FPR))``. ``failed`` holds the indices of skipped draws, so
    ``len(draws) + len(failed) == B``.
    """

    B: int
    names: tuple[str, ...]
    draws: np.ndarray
    roc: np.ndarray
    point: np.ndarray
    seed: int | None
    variant: str
    failed: tuple[int, ...] = ()
    elapsed: float = 0.0
    reasons: dict = field(default_factory=dict, compare=False)
    point_roc: np.ndarray | None = None

    @property
    def successful(self) -> int:
        return self.draws.shape[0]


def _point_scalars(fit):
    rep = steam_report(fit.scored.target_percentiles, fit.risk, fit.config.u0s)
    names = tuple(rep.scalars())
    return names, np.array([rep.scalars()[k] for k in names]), roc_at(rep.roc, BAND_FPR)


def _check_failures(d: PerturbationDraws):
    if len(d.failed) > MAX_FAIL_SHARE * d.B:
        raise RuntimeError(f"{len(d.failed)} of {d.B} perturbation draws failed; "
                           f"first reason: {d.reasons[d.failed[0]]}")


def _run(fit, G, variant, seed=None, check=True) -> PerturbationDraws:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    G = np.atleast_2d(np.asarray(G, dtype=float))
    B = G.shape[0]
    config = fit.config
    beta = fit.beta
    x = fit.outcome_data.labeled_x
    xt = fit.outcome_data.target_x
    y = fit.data.y
    cal = fit.scored.calibrator
    xa, xb = cal.labeled_inputs()
    names, point, point_roc = _point_scalars(fit)
    if variant == "approx":
        pi0, grad = cal.gradient(xa, xb)
    start = time.perf_counter()
    rows, rocs, failed, reasons = [], [], [], {}
    for b in range(B):
        g = G[b]
        try:
            beta_b = glm.refit_at_lambda(x, y, g, beta.gamma, beta.lam, start=beta.values)
            if variant == "exact":
                cal_b = cal.with_beta(beta_b)
                pi_b, _ = cal_b.raw(xa, xb)
            else:
                pi_b = pi0 + grad @ (beta_b.values - beta.values)
            pi_b, _ = cal.clip(pi_b)
            w_b = CalibratedWeights.from_pi(pi_b)
            raw_t = xt @ beta_b.values
            ecdf, P_T = ecdf_and_target_percentiles(raw_t)
            P_L = ecdf(xb @ beta_b.values)
            risk_b = RiskCurve(P_L, y, w_b.w * g, fit.h2)
            rep = steam_report(P_T, risk_b, config.u0s)
            vals = rep.scalars()
            row = np.array([vals[k] for k in names])
            if not np.all(np.isfinite(row)):
                raise ArithmeticError("non-finite perturbed estimate")
            rows.append(row)
            rocs.append(roc_at(rep.roc, BAND_FPR))
        except (glm.SeparationError, glm.ConvergenceError, ValueError, ArithmeticError) as exc:
            failed.append(b)
            reasons[b] = str(exc)
    elapsed = time.perf_counter() - start
    m = len(names)
    out = PerturbationDraws(
        B, names, np.array(rows).reshape(-1, m), np.array(rocs).reshape(-1, BAND_FPR.size),
        point, seed, variant, tuple(failed), elapsed, reasons, point_roc,
    )
    if check:
        _check_failures(out)
    return out


def perturbation_matrix(n: int, B: int, seed) -> np.ndarray:
    """The ``(B, n)`` weight matrix shared by both variants for a given seed."""
    return draw_perturbation_weights((B, n), np.random.default_rng(seed))


_SHARED_FIT = None


def _run_chunk(args):
    G, variant = args
    return _run(_SHARED_FIT, G, variant, check=False)


def _merge(parts, B, variant, seed):
    rows, rocs, failed, reasons, offset = [], [], [], {}, 0
    for part, size in parts:
        rows.append(part.draws)
        rocs.append(part.roc)
        failed.extend(offset + i for i in part.failed)
        reasons.update({offset + i: r for i, r in part.reasons.items()})
        offset += size
    first = parts[0][0]
    return PerturbationDraws(B, first.names, np.vstack(rows), np.vstack(rocs), first.point,
                             seed, variant, tuple(failed),
                             sum(p.elapsed for p, _ in parts), reasons, first.point_roc)


def perturb(fit, variant: str, B: int = 1000, seed=0, G=None,
            workers: int = 1) -> PerturbationDraws:
    """Run ``B`` draws of either variant.

    The weight matrix is fixed before any work is split, so the result does
    not depend on ``workers``.
    """
    global _SHARED_FIT
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    G = perturbation_matrix(fit.data.n, B, seed) if G is None else np.atleast_2d(G)
    B = G.shape[0]
    if workers <= 1 or B < 2 * workers:
        return _run(fit, G, variant, seed)
    chunks = np.array_split(G, workers)
    ctx = mp.get_context("fork")
    _SHARED_FIT = fit
    try:
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            parts = list(pool.map(_run_chunk, [(c, variant) for c in chunks]))
    finally:
        _SHARED_FIT = None
    out = _merge(list(zip(parts, (c.shape[0] for c in chunks))), B, variant, seed)
    _check_failures(out)
    return out


def perturb_exact(fit, B: int = 1000, seed=0, G=None, workers: int = 1) -> PerturbationDraws:
    """Resample with the calibrated probabilities re-smoothed at every draw."""
    return perturb(fit, "exact", B, seed, G, workers)


def perturb_approx(fit, B: int = 1000, seed=0, G=None, workers: int = 1) -> PerturbationDraws:
    """Resample with the calibrated probabilities linearized in the outcome
    coefficients (one gradient evaluation for all draws)."""
    return perturb(fit, "approx", B, seed, G, workers)


@dataclass(frozen=True)
class Interval:
    se: float
    lower: float
    upper: float


def _quantiles(a, level):
    lo = (1.0 - level) / 2.0
    return np.quantile(a, [lo, 1.0 - lo], axis=0, method="linear")


def summarize_draws(draws, level: float = 0.95, min_draws: int = MIN_DRAWS_FOR_CI,
                    center=None) -> dict:
    """``name -> Interval``: sample SD and percentile interval of the draws.

    Accepts :class:`PerturbationDraws` or a plain 1-D array (returned under
    the key ``"value"``). ``center`` (a ``name -> value`` map) shifts each
    interval by ``center - point``, so it brackets a different point
    estimate, such as a cross-validated one, with the same resampled spread.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if isinstance(draws, PerturbationDraws):
        names, mat, point = draws.names, draws.draws, draws.point
    else:
        names, mat = ("value",), np.asarray(draws, dtype=float).reshape(-1, 1)
        point = None
    if mat.shape[0] < min_draws:
        raise ValueError(f"{mat.shape[0]} successful draws; need at least {min_draws}")
    se = np.std(mat, axis=0, ddof=1)
    lo, hi = _quantiles(mat, level)
    if center is not None:
        if point is None:
            raise ValueError("recentring needs the draws' point estimate")
        shift = np.array([center[k] for k in names]) - point
        lo, hi = lo + shift, hi + shift
    return {k: Interval(float(se[j]), float(lo[j]), float(hi[j])) for j, k in enumerate(names)}


def roc_band(draws: PerturbationDraws, level: float = 0.95,
             center=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pointwise percentile band for the ROC on :data:`BAND_FPR`.

    ``center`` (TPR values on :data:`BAND_FPR`) shifts the band the same way
    :func:`summarize_draws` shifts intervals; the result is clipped to [0, 1].
    """
    lo, hi = _quantiles(draws.roc, level)
    if center is not None:
        shift = np.asarray(center, dtype=float) - draws.point_roc
        lo, hi = np.clip(lo + shift, 0.0, 1.0), np.clip(hi + shift, 0.0, 1.0)
    return BAND_FPR.copy(), lo, hi
