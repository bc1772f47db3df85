"""Selection model, kernel-calibrated source probability and density-ratio weights.

The probability that a unit belongs to the source sample is estimated by
smoothing the source indicator over two normal-PIT scores: the selection
model score and the outcome model score. Smoothing runs over the pooled
unlabeled source and target rows. Weights for labeled source units are
``(1 - pi) / pi``; the constant prior-odds factor cancels in every
downstream ratio and is left out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import glm
from ._smoothing import WINDOW, nw2d_grad_terms, nw2d_sums
from .data import BasisExpansion, StudyData, expand_basis
from .glm import Coefficients

PI_MIN = 0.01
TINY = 1e-300
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def fit_selection_model(data: StudyData, expansion: BasisExpansion | None = None,
                        lambda_grid=None, gamma: float = 1.0) -> Coefficients:
    """Adaptive LASSO of the source indicator on pooled unlabeled source and target."""
    if data.n_unlabeled < 1 or data.n_target < 1:
        raise ValueError("selection model needs unlabeled source and target rows")
    if expansion is not None:
        data = expand_basis(data, expansion)
    x, s = data.pooled_unlabeled()
    return glm.fit_adaptive_lasso(x, s, None, gamma, lambda_grid)


def _values(c) -> np.ndarray:
    return c.values if isinstance(c, Coefficients) else np.asarray(c, dtype=float)


@dataclass(frozen=True)
class _Coordinate:
    """PIT-standardized score over the pooled sample plus what queries need."""

    pit: np.ndarray
    mean: float
    sd: float
    h: float
    degenerate: bool

    @classmethod
    def build(cls, raw, size_factor, h=None):
        mean = float(np.mean(raw))
        sd = float(np.std(raw, ddof=1)) if raw.size > 1 else 0.0
        if not sd > 0:
            # a constant score carries no information: smooth over the other axis
            return cls(np.full(raw.size, 0.5), mean, 0.0, 1.0, True)
        pit = ndtr((raw - mean) / sd)
        if h is None:
            h = float(np.std(pit, ddof=1)) * size_factor
        return cls(pit, mean, sd, float(h), False)

    def transform(self, raw):
        if self.degenerate:
            return np.full(np.shape(raw), 0.5)
        return ndtr((raw - self.mean) / self.sd)


class PiCalibrator:
    """Kernel-calibrated ``P(S = 1 | scores)`` evaluator.

    Parameters
    ----------
    alpha, beta : Coefficients or array
        Selection and outcome model coefficients.
    selection_data, outcome_data : StudyData
        The study expanded by the selection and outcome bases. Both must hold
        the same rows; ``outcome_data`` defaults to ``selection_data``.
    h1 : (float, float), optional
        Fixed bandwidths for the (selection, outcome) coordinates. By default
        each is the sample SD of the PIT'd coordinate times
        ``(N + N_t) ** (-1/6)`` times ``h1_mult``.
    pi_min : float
        Output is clipped to ``[pi_min, 1 - pi_min]``.
    """

    def __init__(self, alpha, beta, selection_data: StudyData,
                 outcome_data: StudyData | None = None, *, h1=None,
                 h1_mult: float = 1.0, pi_min: float = PI_MIN, _shared=None):
        if not 0 <= pi_min < 0.5:
            raise ValueError("pi_min must lie in [0, 0.5)")
        outcome_data = selection_data if outcome_data is None else outcome_data
        self.alpha = alpha
        self.beta = beta
        self.selection_data = selection_data
        self.outcome_data = outcome_data
        self.h1 = None if h1 is None else (float(h1[0]), float(h1[1]))
        self.h1_mult = float(h1_mult)
        self.pi_min = float(pi_min)
        if _shared is None:
            _shared = self._build_selection_side()
        self._shared = _shared
        order = _shared["order"]
        xb, _ = outcome_data.pooled_unlabeled()
        self._pooled_zb = np.ascontiguousarray(xb[order])
        self._coord_b = _Coordinate.build(
            self._pooled_zb @ _values(beta), _shared["size_factor"],
            None if self.h1 is None else self.h1[1])

    def _build_selection_side(self):
        xa, s = self.selection_data.pooled_unlabeled()
        if s.size < 2:
            raise ValueError("pooled unlabeled sample is too small")
        size_factor = s.size ** (-1.0 / 6.0) * self.h1_mult
        raw = xa @ _values(self.alpha)
        coord = _Coordinate.build(raw, size_factor, None if self.h1 is None else self.h1[0])
        order = np.argsort(coord.pit, kind="stable")
        coord = _Coordinate(np.ascontiguousarray(coord.pit[order]), coord.mean, coord.sd,
                            coord.h, coord.degenerate)
        return {"order": order, "coord_a": coord, "s": np.ascontiguousarray(s[order]),
                "size_factor": size_factor}

    def with_beta(self, beta) -> "PiCalibrator":
        """Same selection side, new outcome coefficients (no re-sorting)."""
        return PiCalibrator(self.alpha, beta, self.selection_data, self.outcome_data,
                            h1=self.h1, h1_mult=self.h1_mult, pi_min=self.pi_min,
                            _shared=self._shared)

    @property
    def bandwidths(self) -> tuple[float, float]:
        return self._shared["coord_a"].h, self._coord_b.h

    @property
    def pooled_s(self) -> np.ndarray:
        return self._shared["s"]

    def _queries(self, xa, xb):
        qa = self._shared["coord_a"].transform(np.asarray(xa, dtype=float) @ _values(self.alpha))
        qb = self._coord_b.transform(np.asarray(xb, dtype=float) @ _values(self.beta))
        return np.ascontiguousarray(qa, dtype=float), np.ascontiguousarray(qb, dtype=float)

    def _nearest_s(self, qa, qb):
        ca, cb = self._shared["coord_a"], self._coord_b
        da = (ca.pit[None, :] - qa[:, None]) / ca.h
        db = (cb.pit[None, :] - qb[:, None]) / cb.h
        return self.pooled_s[np.argmin(da * da + db * db, axis=1)]

    def raw(self, xa, xb) -> tuple[np.ndarray, int]:
        """Unclipped smoother at the query designs and the number of
        queries whose kernel mass underflowed (set to the nearest pooled S)."""
        qa, qb = self._queries(xa, xb)
        ca, cb = self._shared["coord_a"], self._coord_b
        num, den = nw2d_sums(ca.pit, cb.pit, self.pooled_s, ca.h, cb.h, qa, qb)
        out = np.empty_like(num)
        ok = den >= TINY
        out[ok] = num[ok] / den[ok]
        n_bad = int(np.count_nonzero(~ok))
        if n_bad:
            out[~ok] = self._nearest_s(qa[~ok], qb[~ok])
        return out, n_bad

    def clip(self, pi) -> tuple[np.ndarray, int]:
        lo, hi = self.pi_min, 1.0 - self.pi_min
        hit = (pi < lo) | (pi > hi)
        return np.clip(pi, lo, hi), int(np.count_nonzero(hit))

    def __call__(self, xa, xb=None) -> np.ndarray:
        pi, _ = self.raw(xa, xa if xb is None else xb)
        return self.clip(pi)[0]

    def labeled_inputs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.selection_data.labeled_x, self.outcome_data.labeled_x

    def gradient(self, xa=None, xb=None) -> tuple[np.ndarray, np.ndarray]:
        """Unclipped smoother and its gradient in the outcome coefficients.

        The derivative runs through the query's and every pooled unit's
        outcome-score PIT coordinate and, unless bandwidths are fixed, the
        data-driven bandwidth of that coordinate. Defaults to the labeled
        source units. Returns ``(pi, grad)`` with ``grad`` of shape
        ``(queries, len(beta))``.
        """
        if xa is None:
            xa, xb = self.labeled_inputs()
        xb = np.asarray(xa if xb is None else xb, dtype=float)
        qa, qb = self._queries(xa, xb)
        ca, cb = self._shared["coord_a"], self._coord_b
        q = xb.shape[1]
        if cb.degenerate:
            pi, _ = self.raw(xa, xb)
            return pi, np.zeros((qa.size, q))
        Z = self._pooled_zb
        m = Z.shape[0]
        zbar = Z.mean(axis=0)
        t = Z @ _values(self.beta)
        z = (t - cb.mean) / cb.sd
        ds = (t - cb.mean) @ (Z - zbar) / ((m - 1) * cb.sd)
        dz = (Z - zbar) / cb.sd - np.outer(z, ds) / cb.sd
        db_pool = np.ascontiguousarray(_INV_SQRT_2PI * np.exp(-0.5 * z * z)[:, None] * dz)
        zq = (xb @ _values(self.beta) - cb.mean) / cb.sd
        dzq = (xb - zbar) / cb.sd - np.outer(zq, ds) / cb.sd
        db_q = _INV_SQRT_2PI * np.exp(-0.5 * zq * zq)[:, None] * dzq
        if self.h1 is None:
            b = cb.pit
            sd_b = float(np.std(b, ddof=1))
            dh = self._shared["size_factor"] * ((b - b.mean()) @ db_pool) / ((m - 1) * sd_b)
        else:
            dh = np.zeros(q)
        pi, den, A, C1, C2 = nw2d_grad_terms(ca.pit, cb.pit, self.pooled_s, ca.h, cb.h,
                                             qa, qb, db_pool)
        ok = den >= TINY
        grad = np.zeros((qa.size, q))
        grad[ok] = -(A[ok] - C1[ok, None] * db_q[ok] - C2[ok, None] * dh[None, :]) \
            / (cb.h * den[ok])[:, None]
        if not np.all(ok):
            pi = pi.copy()
            pi[~ok] = self._nearest_s(qa[~ok], qb[~ok])
        return pi, grad


def calibrate_pi(alpha, beta, selection_data: StudyData, outcome_data: StudyData | None = None,
                 *, h1=None, h1_mult: float = 1.0, pi_min: float = PI_MIN) -> PiCalibrator:
    return PiCalibrator(alpha, beta, selection_data, outcome_data, h1=h1, h1_mult=h1_mult,
                        pi_min=pi_min)


@dataclass(frozen=True)
class CalibratedWeights:
    """Density-ratio weights ``(1 - pi) / pi`` for labeled source units."""

    w: np.ndarray
    pi: np.ndarray
    clip_count: int = 0
    fallback_count: int = 0

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if pi.shape != w.shape:
            raise ValueError("weights and probabilities differ in length")
        if not (np.all(np.isfinite(w)) and np.all(w > 0)):
            raise ValueError("weights must be finite and positive")

    @classmethod
    def from_pi(cls, pi, clip_count: int = 0, fallback_count: int = 0) -> "CalibratedWeights":
        pi = np.asarray(pi, dtype=float)
        return cls((1.0 - pi) / pi, pi, clip_count, fallback_count)


def calibrated_weights(calibrator: PiCalibrator, xa=None, xb=None) -> CalibratedWeights:
    """Weights at the labeled source units (or at the given query designs)."""
    if xa is None:
        xa, xb = calibrator.labeled_inputs()
    raw, n_fallback = calibrator.raw(xa, xa if xb is None else xb)
    pi, n_clip = calibrator.clip(raw)
    return CalibratedWeights.from_pi(pi, n_clip, n_fallback)


def pi_gradient_wrt_beta(calibrator: PiCalibrator, xa=None, xb=None) -> np.ndarray:
    """Analytic ``d pi_hat / d beta`` at each labeled source unit (unclipped smoother)."""
    return calibrator.gradient(xa, xb)[1]


__all__ = [
    "PI_MIN", "WINDOW", "CalibratedWeights", "PiCalibrator", "calibrate_pi",
    "calibrated_weights", "fit_selection_model", "pi_gradient_wrt_beta",
]
