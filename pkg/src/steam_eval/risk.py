"""Weighted kernel estimate of the conditional risk over percentile scores."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._smoothing import nw1d_grid_sums, nw1d_sums, sort_support

MIN_LABELED = 20
TINY = 1e-300


def _as_weights(w) -> np.ndarray:
    return np.asarray(getattr(w, "w", w), dtype=float)


@dataclass(frozen=True)
class RiskCurve:
    """Nadaraya-Watson smoother of the outcome over labeled percentile scores.

    Calling the curve at ``q`` gives ``sum K(P_i - q) w_i Y_i / sum K(P_i - q) w_i``
    with a Gaussian kernel of bandwidth ``h2``. Queries are clamped to
    ``[0, 1]``. If the denominator underflows the outcome of the nearest
    support point is returned and ``fallbacks`` is incremented.
    """

    support_points: np.ndarray
    outcomes: np.ndarray
    weights: np.ndarray
    h2: float
    fallbacks: list = field(default_factory=lambda: [0], compare=False, repr=False)

    def __post_init__(self):
        p = np.asarray(self.support_points, dtype=float)
        y = np.asarray(self.outcomes, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if not (p.shape == y.shape == w.shape):
            raise ValueError("support points, outcomes and weights differ in length")
        if not self.h2 > 0:
            raise ValueError("bandwidth must be positive")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        sp, sy, sw = sort_support(p, y, w)
        object.__setattr__(self, "_p", sp)
        object.__setattr__(self, "_num", sy * sw)
        object.__setattr__(self, "_den", sw)
        object.__setattr__(self, "_y", sy)

    @property
    def fallback_count(self) -> int:
        return self.fallbacks[0]

    def _finish(self, q, num, den):
        out = np.empty_like(num)
        ok = den >= TINY
        out[ok] = num[ok] / den[ok]
        if not np.all(ok):
            bad = np.flatnonzero(~ok)
            idx = np.clip(np.searchsorted(self._p, q[bad]), 1, self._p.size - 1)
            left = self._p[idx - 1]
            right = self._p[idx]
            nearest = np.where(q[bad] - left <= right - q[bad], idx - 1, idx)
            if self._p.size == 1:
                nearest = np.zeros_like(bad)
            out[bad] = self._y[nearest]
            self.fallbacks[0] += int(bad.size)
        return np.clip(out, 0.0, 1.0)

    def __call__(self, q):
        scalar = np.ndim(q) == 0
        q = np.clip(np.atleast_1d(np.asarray(q, dtype=float)), 0.0, 1.0)
        num, den = nw1d_sums(self._p, self._num, self._den, float(self.h2), q)
        out = self._finish(q, num, den)
        return float(out[0]) if scalar else out

    def on_grid(self, n_grid: int) -> np.ndarray:
        """Curve at ``k / n_grid`` for k = 1..n_grid."""
        num, den = nw1d_grid_sums(self._p, self._num, self._den, float(self.h2), int(n_grid))
        q = np.arange(1, n_grid + 1) / n_grid
        return self._finish(q, num, den)

    def at_target(self, target_percentiles) -> np.ndarray:
        """Curve at target percentiles, using the grid sweep when they are
        exact multiples of 1/N_t (always true for a target ECDF)."""
        P = np.asarray(target_percentiles, dtype=float)
        n_t = P.size
        k = np.rint(P * n_t).astype(np.int64)
        if n_t > 0 and np.all(k >= 1) and np.array_equal(k / n_t, P):
            return self.on_grid(n_t)[k - 1]
        return self(P)


def check_undersmoothing(nu2: float) -> None:
    if not 0.25 < nu2 < 0.5:
        raise ValueError(f"bandwidth rate exponent {nu2} outside (1/4, 1/2)")


def default_h2(percentiles, nu2: float = 0.4, multiplier: float = 1.0) -> float:
    """Plug-in bandwidth ``n^-nu2 * SD(percentiles)``."""
    check_undersmoothing(nu2)
    P = np.asarray(percentiles, dtype=float)
    if P.size < 2:
        raise ValueError("need at least two percentile scores")
    sd = float(np.std(P, ddof=1))
    if not (sd > 0 and np.ptp(P) > 0):
        raise ValueError("percentile scores have zero spread")
    return multiplier * P.size ** (-nu2) * sd


def build_risk_curve(percentiles, y, w, h2: float) -> RiskCurve:
    P = np.asarray(percentiles, dtype=float)
    if P.size < MIN_LABELED:
        raise ValueError(f"need at least {MIN_LABELED} labeled units, got {P.size}")
    return RiskCurve(P, np.asarray(y, dtype=float), _as_weights(w), float(h2))
