"""ROC-type accuracy measures on the percentile-cutoff scale.

Every estimator here reduces to weighted tail sums: for cutoff ``c`` the true
positive rate is the share of "positive mass" sitting at percentile ``>= c``
and the false positive rate the share of "negative mass". Estimators differ
only in which units carry mass and how much.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .risk import RiskCurve

DEFAULT_U0 = (0.05,)


class Method(str, enum.Enum):
    SOURCE = "source"
    TARGET_LABELED = "target_labeled"
    WEIGHTED = "weighted"
    DR_AUG = "dr_aug"
    STEAM = "steam"


class DegenerateError(ValueError):
    """A rate or predictive value has an empty denominator."""


@dataclass(frozen=True)
class RocGrid:
    """Ascending cutoffs with their TPR and FPR.

    The last cutoff is ``inf``, a sentinel above every percentile that
    supplies the (0, 0) end of the curve.
    """

    cutoffs: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray

    def __len__(self):
        return self.cutoffs.size


@dataclass(frozen=True)
class OperatingPoint:
    u0: float
    cutoff: float
    tpr: float
    fpr: float
    ppv: float
    npv: float


@dataclass(frozen=True)
class AccuracyReport:
    method: str
    roc: RocGrid
    auc: float
    prevalence: float
    at_fpr: dict
    diagnostics: dict = field(default_factory=dict)

    def scalars(self) -> dict:
        """Flat ``name -> value`` map of the reported scalars."""
        out = {"auc": self.auc, "prevalence": self.prevalence}
        for u0, op in self.at_fpr.items():
            tag = f"@{u0:g}"
            out["cutoff" + tag] = op.cutoff
            out["tpr" + tag] = op.tpr
            out["ppv" + tag] = op.ppv
            out["npv" + tag] = op.npv
        return out


def cutoff_grid(*percentile_sets) -> np.ndarray:
    """Distinct percentiles of the given sets, plus 0, 1 and the ``inf`` sentinel."""
    vals = [np.asarray(p, dtype=float).ravel() for p in percentile_sets]
    grid = np.unique(np.concatenate(vals + [np.array([0.0, 1.0])]))
    return np.append(grid, np.inf)


def _tails(percentiles, masses, cutoffs):
    """Tail sums ``sum(mass[P >= c])`` and the grand total, for several mass
    vectors at once. The total comes from the same cumulative sum so the
    share at ``c = 0`` is exactly one."""
    P = np.asarray(percentiles, dtype=float)
    order = np.argsort(P, kind="stable")
    idx = np.searchsorted(P[order], np.asarray(cutoffs, dtype=float), side="left")
    out = []
    for m in masses:
        m = np.asarray(m, dtype=float)[order]
        tail = np.concatenate([np.cumsum(m[::-1])[::-1], [0.0]])
        out.append((tail[idx], tail[0]))
    return out


def tail_shares(percentiles, mass, cutoffs) -> np.ndarray:
    """``sum(mass[P >= c]) / sum(mass)`` for each cutoff ``c``."""
    return _shares(*_tails(percentiles, [mass], cutoffs)[0])


def _shares(tail, total):
    if not total > 0:
        raise DegenerateError("degenerate imputed prevalence: no mass in one class")
    return np.clip(tail / total, 0.0, 1.0)


def _rates(percentiles, pos, neg, cutoffs) -> RocGrid:
    c = np.asarray(cutoffs, dtype=float)
    tp, tn = _tails(percentiles, [pos, neg], c)
    return RocGrid(c, _shares(*tp), _shares(*tn))


def steam_tpr_fpr(target_percentiles, risk, cutoffs=None) -> RocGrid:
    """Project imputed risks onto the target sample.

    ``risk`` is a :class:`RiskCurve` or the array of imputed risks at the
    target units.
    """
    P = np.asarray(target_percentiles, dtype=float)
    m = risk.at_target(P) if isinstance(risk, RiskCurve) else np.asarray(risk, dtype=float)
    if cutoffs is None:
        cutoffs = cutoff_grid(P)
    return _rates(P, m, 1.0 - m, cutoffs)


def steam_auc(roc: RocGrid) -> float:
    """Trapezoid area under TPR against FPR."""
    if len(roc) < 2:
        raise ValueError("ROC grid needs at least two points")
    order = np.lexsort((roc.tpr, roc.fpr))
    return float(np.clip(np.trapezoid(roc.tpr[order], roc.fpr[order]), 0.0, 1.0))


def _bracket(roc: RocGrid, u):
    """Index ``k`` of the smallest cutoff with FPR <= u and the linear
    fraction of the way from ``k - 1`` to ``k`` at which FPR equals u."""
    u = np.asarray(u, dtype=float)
    k = np.searchsorted(-roc.fpr, -u, side="left")
    km1 = np.maximum(k - 1, 0)
    f0, f1 = roc.fpr[km1], roc.fpr[k]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(k == 0, 1.0, (f0 - u) / (f0 - f1))
    return k, km1, frac


def steam_cutoff_at_fpr(roc: RocGrid, u0: float) -> tuple[float, float, float]:
    """(cutoff, TPR, FPR) where FPR first falls to ``u0``, linearly interpolated."""
    if not 0 < u0 <= 1:
        raise ValueError("u0 must lie in (0, 1]")
    finite = np.isfinite(roc.cutoffs)
    if roc.fpr[finite][-1] > u0:
        raise ValueError(f"FPR {u0} is not attainable on this grid")
    k, km1, frac = (float(v) if i == 2 else int(v) for i, v in enumerate(_bracket(roc, u0)))
    if k == 0:
        return float(roc.cutoffs[0]), float(roc.tpr[0]), float(roc.fpr[0])
    c0, c1 = roc.cutoffs[km1], min(roc.cutoffs[k], 1.0)
    tpr = roc.tpr[km1] + frac * (roc.tpr[k] - roc.tpr[km1])
    fpr = roc.fpr[km1] + frac * (roc.fpr[k] - roc.fpr[km1])
    return float(c0 + frac * (c1 - c0)), float(tpr), float(fpr)


def roc_at(roc: RocGrid, fpr_points) -> np.ndarray:
    """TPR at the given false positive rates (same inverse as the cutoff)."""
    k, km1, frac = _bracket(roc, np.atleast_1d(np.asarray(fpr_points, dtype=float)))
    return roc.tpr[km1] + frac * (roc.tpr[k] - roc.tpr[km1])


def steam_ppv_npv(tpr: float, fpr: float, prevalence: float) -> tuple[float, float]:
    mu = prevalence
    a, b = mu * tpr, (1.0 - mu) * fpr
    c, d = (1.0 - mu) * (1.0 - fpr), mu * (1.0 - tpr)
    if not a + b > 0:
        raise DegenerateError("PPV denominator is zero")
    if not c + d > 0:
        raise DegenerateError("NPV denominator is zero")
    return a / (a + b), c / (c + d)


def _report(method, roc, prevalence, u0s, diagnostics=None) -> AccuracyReport:
    at = {}
    for u0 in u0s:
        c, tpr, fpr = steam_cutoff_at_fpr(roc, u0)
        ppv, npv = steam_ppv_npv(tpr, fpr, prevalence)
        at[float(u0)] = OperatingPoint(float(u0), c, tpr, fpr, ppv, npv)
    return AccuracyReport(str(method.value if isinstance(method, Method) else method), roc,
                          steam_auc(roc), float(prevalence), at, dict(diagnostics or {}))


def steam_report(target_percentiles, risk, u0s=DEFAULT_U0, diagnostics=None) -> AccuracyReport:
    P = np.asarray(target_percentiles, dtype=float)
    m = risk.at_target(P) if isinstance(risk, RiskCurve) else np.asarray(risk, dtype=float)
    roc = steam_tpr_fpr(P, m)
    return _report(Method.STEAM, roc, float(m.mean()), u0s, diagnostics)


def _labeled(method, percentiles, y, w, u0s, cutoffs, diagnostics):
    P = np.asarray(percentiles, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(getattr(w, "w", w), dtype=float)
    # dividing by the largest weight makes any constant weight vector exactly 1
    w = w / np.max(w)
    if not (np.any(y == 1) and np.any(y == 0)):
        raise DegenerateError("need both positive and negative labeled outcomes")
    if cutoffs is None:
        cutoffs = cutoff_grid(P)
    roc = _rates(P, w * y, w * (1.0 - y), cutoffs)
    return _report(method, roc, float(np.sum(w * y) / np.sum(w)), u0s, diagnostics)


def comparator_weighted(percentiles, y, w, u0s=DEFAULT_U0, cutoffs=None,
                        diagnostics=None) -> AccuracyReport:
    """Importance-weighted empirical estimator on the labeled source sample."""
    return _labeled(Method.WEIGHTED, percentiles, y, w, u0s, cutoffs, diagnostics)


def comparator_source(percentiles, y, u0s=DEFAULT_U0, cutoffs=None,
                      diagnostics=None) -> AccuracyReport:
    """Unweighted empirical estimator on labeled source percentiles (pass
    held-out percentiles to avoid apparent-accuracy optimism)."""
    return _labeled(Method.SOURCE, percentiles, y, None, u0s, cutoffs, diagnostics)


def comparator_target_labeled(percentiles, y, u0s=DEFAULT_U0, cutoffs=None,
                              diagnostics=None) -> AccuracyReport:
    """Empirical estimator on a labeled validation subsample of the target."""
    if y is None or len(y) == 0:
        raise ValueError("target_labeled needs validation labels")
    return _labeled(Method.TARGET_LABELED, percentiles, y, None, u0s, cutoffs, diagnostics)


def rearrange_nonincreasing(values) -> np.ndarray:
    """Monotone rearrangement: the sorted values, largest first."""
    return np.sort(np.asarray(values, dtype=float))[::-1]


def comparator_dr_aug(labeled_percentiles, y, w, target_percentiles, risk,
                      u0s=DEFAULT_U0, cutoffs=None, diagnostics=None) -> AccuracyReport:
    """Augmented inverse-weighting estimator.

    The class-mass numerator at cutoff ``c`` is the weighted labeled mean of
    ``I(P >= c) (Y - m)`` plus the target mean of ``I(P >= c) m``, with ``m``
    the imputed risk. Rates divide by the numerator at ``c = 0``. The raw
    curves need not be monotone, so they are rearranged and clipped to
    ``[0, 1]``.
    """
    PL = np.asarray(labeled_percentiles, dtype=float)
    PT = np.asarray(target_percentiles, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(getattr(w, "w", w), dtype=float)
    if isinstance(risk, RiskCurve):
        mL, mT = risk(PL), risk.at_target(PT)
    else:
        mL, mT = (np.asarray(r, dtype=float) for r in risk)
    if cutoffs is None:
        cutoffs = cutoff_grid(PT)
    cutoffs = np.asarray(cutoffs, dtype=float)

    def tails(P, mass):
        order = np.argsort(P, kind="stable")
        tail = np.concatenate([np.cumsum(mass[order][::-1])[::-1], [0.0]])
        return tail[np.searchsorted(P[order], cutoffs, side="left")]

    wn = w / w.sum()
    pos = tails(PL, wn * (y - mL)) + tails(PT, mT / PT.size)
    neg = tails(PL, wn * (mL - y)) + tails(PT, (1.0 - mT) / PT.size)
    pos0 = float(np.sum(wn * (y - mL)) + mT.mean())
    neg0 = 1.0 - pos0
    if not (pos0 > 0 and neg0 > 0):
        raise DegenerateError("degenerate augmented prevalence")
    tpr = np.clip(rearrange_nonincreasing(pos / pos0), 0.0, 1.0)
    fpr = np.clip(rearrange_nonincreasing(neg / neg0), 0.0, 1.0)
    roc = RocGrid(cutoffs, tpr, fpr)
    return _report(Method.DR_AUG, roc, pos0, u0s, diagnostics)
