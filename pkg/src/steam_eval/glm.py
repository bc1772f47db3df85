"""Logistic working models: unpenalized Newton fits and adaptive LASSO paths.

Both the outcome model and the selection model are fitted here. Observation
weights are rescaled to mean one before fitting, so multiplying every weight
by a constant never changes a fit (including the BIC choice of penalty).

The penalized solver is a proximal Newton scheme: at each outer step the
log-likelihood is replaced by its quadratic expansion, the resulting LASSO
problem is solved exactly by cyclic coordinate descent on the Gram form, and a
backtracking line search on the true penalized objective keeps the objective
trace nondecreasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

SEPARATION_BOUND = 30.0
PENALTY_CAP = 1e6
RIDGE_FALLBACK = 1e-4


class SeparationError(RuntimeError):
    """Coefficients diverged (complete or quasi-complete separation)."""


class ConvergenceError(RuntimeError):
    """Newton iterations hit their limit; ``trace`` holds gradient norms."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = tuple(trace)


@dataclass(frozen=True)
class Coefficients:
    """A fitted logistic coefficient vector (index 0 is the intercept)."""

    values: np.ndarray
    lam: float = 0.0
    gamma: float = 0.0
    penalty_weights: np.ndarray | None = None
    capped: bool = False
    ridge_fallback: bool = False
    trace: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("coefficients must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.values[1:] != 0.0) + 1

    @property
    def df(self) -> int:
        return int(self.support.size) + 1

    def __len__(self):
        return self.values.size


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _log1pexp(eta):
    if eta > 0.0:
        return eta + math.log1p(math.exp(-eta))
    return math.log1p(math.exp(eta))


@njit(cache=True)
def _expit(eta):
    if eta >= 0.0:
        return 1.0 / (1.0 + math.exp(-eta))
    e = math.exp(eta)
    return e / (1.0 + e)


@njit(cache=True)
def _mean_loglik(X, y, w, beta):
    n, q = X.shape
    ll = 0.0
    sw = 0.0
    for i in range(n):
        eta = 0.0
        for j in range(q):
            eta += X[i, j] * beta[j]
        ll += w[i] * (y[i] * eta - _log1pexp(eta))
        sw += w[i]
    return ll / sw


@njit(cache=True)
def _penalized_objective(X, y, w, beta, lam, pen, ridge):
    val = _mean_loglik(X, y, w, beta)
    q = beta.shape[0]
    for j in range(1, q):
        val -= lam * pen[j] * abs(beta[j]) + 0.5 * ridge * beta[j] * beta[j]
    return val


@njit(cache=True)
def _grad_hess(X, y, w, beta):
    n, q = X.shape
    g = np.zeros(q)
    H = np.zeros((q, q))
    sw = 0.0
    for i in range(n):
        eta = 0.0
        for j in range(q):
            eta += X[i, j] * beta[j]
        p = _expit(eta)
        r = w[i] * (y[i] - p)
        v = w[i] * p * (1.0 - p)
        sw += w[i]
        for j in range(q):
            xij = X[i, j]
            g[j] += r * xij
            vx = v * xij
            for k in range(j + 1):
                H[j, k] += vx * X[i, k]
    for j in range(q):
        g[j] /= sw
        for k in range(j + 1):
            H[j, k] /= sw
            H[k, j] = H[j, k]
    return g, H


@njit(cache=True)
def _newton(X, y, w, beta, ridge, max_iter, tol, bound, trace):
    """Damped Newton ascent. Status 0 converged, 1 diverged, 2 iteration cap."""
    q = beta.shape[0]
    zero_pen = np.zeros(q)
    for it in range(max_iter):
        g, H = _grad_hess(X, y, w, beta)
        for j in range(1, q):
            g[j] -= ridge * beta[j]
            H[j, j] += ridge
        gn = 0.0
        for j in range(q):
            gn = max(gn, abs(g[j]))
        trace[it] = gn
        if gn <= tol:
            return 0, it
        step = np.linalg.solve(H, g)
        f0 = _penalized_objective(X, y, w, beta, 0.0, zero_pen, ridge)
        t = 1.0
        nb = beta + step
        for _ in range(40):
            nb = beta + t * step
            if _penalized_objective(X, y, w, nb, 0.0, zero_pen, ridge) >= f0:
                break
            t *= 0.5
        beta[:] = nb
        for j in range(q):
            if abs(beta[j]) > bound:
                return 1, it + 1
    return 2, max_iter


@njit(cache=True)
def _cd_quadratic(H, g, beta0, beta, lam, pen, ridge, tol, max_sweeps):
    """Coordinate descent on the local quadratic model plus L1 penalty.

    Maximizes g'(b - b0) - (b - b0)'H(b - b0)/2 - lam * sum pen_j |b_j|
    - ridge * |b_{-0}|^2 / 2 starting from ``beta`` (modified in place).
    """
    q = beta.shape[0]
    r = g.copy()
    for j in range(q):
        d = beta[j] - beta0[j]
        if d != 0.0:
            for k in range(q):
                r[k] -= H[k, j] * d
    for sweep in range(max_sweeps):
        maxd = 0.0
        for j in range(q):
            rj = ridge if j > 0 else 0.0
            a = H[j, j] + rj
            if a <= 1e-300:
                new = 0.0
            else:
                z = r[j] + H[j, j] * beta[j]
                if j == 0 or pen[j] == 0.0:
                    new = z / a
                else:
                    thr = lam * pen[j]
                    if z > thr:
                        new = (z - thr) / a
                    elif z < -thr:
                        new = (z + thr) / a
                    else:
                        new = 0.0
            d = new - beta[j]
            if d != 0.0:
                for k in range(q):
                    r[k] -= H[k, j] * d
                beta[j] = new
                if abs(d) > maxd:
                    maxd = abs(d)
        if maxd <= tol:
            return sweep + 1
    return max_sweeps


@njit(cache=True)
def _prox_newton(X, y, w, beta, lam, pen, ridge, tol, max_sweeps, trace):
    """Penalized fit from a warm start; returns the number of outer sweeps."""
    q = beta.shape[0]
    f = _penalized_objective(X, y, w, beta, lam, pen, ridge)
    trace[0] = f
    for it in range(max_sweeps):
        g, H = _grad_hess(X, y, w, beta)
        prop = beta.copy()
        _cd_quadratic(H, g, beta, prop, lam, pen, ridge, 1e-12, 1000)
        d = prop - beta
        t = 1.0
        accepted = False
        nb = beta.copy()
        for _ in range(50):
            for j in range(q):
                nb[j] = beta[j] + t * d[j]
            fn = _penalized_objective(X, y, w, nb, lam, pen, ridge)
            if fn >= f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            trace[it + 1] = f
            return it + 1
        maxd = 0.0
        for j in range(q):
            maxd = max(maxd, abs(nb[j] - beta[j]))
        beta[:] = nb
        f = fn
        trace[it + 1] = f
        if maxd <= tol:
            return it + 1
    return max_sweeps


# ---------------------------------------------------------------------------
# public API


def _prep(X, y, obs_weights):
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (n, q) and y length n")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("responses must lie in [0, 1]")
    if obs_weights is None:
        w = np.ones(X.shape[0])
    else:
        w = np.ascontiguousarray(obs_weights, dtype=float)
        if w.shape != y.shape:
            raise ValueError("obs_weights length must match rows of X")
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("obs_weights must be nonnegative and not all zero")
    return X, y, w * (w.size / w.sum())


def mean_loglik(coef, X, y, obs_weights=None) -> float:
    """Weighted mean log-likelihood (weights rescaled to mean one)."""
    X, y, w = _prep(X, y, obs_weights)
    v = coef.values if isinstance(coef, Coefficients) else np.asarray(coef, dtype=float)
    return float(_mean_loglik(X, y, w, np.ascontiguousarray(v)))


def score(coef, X, y, obs_weights=None) -> np.ndarray:
    """Analytic score sum_i w_i x_i (y_i - expit(x_i'b)) on the raw weight scale."""
    X = np.asarray(X, dtype=float)
    w = np.ones(X.shape[0]) if obs_weights is None else np.asarray(obs_weights, dtype=float)
    v = coef.values if isinstance(coef, Coefficients) else np.asarray(coef, dtype=float)
    p = 1.0 / (1.0 + np.exp(-(X @ v)))
    return X.T @ (w * (np.asarray(y, dtype=float) - p))


def _newton_fit(X, y, w, ridge, max_iter, tol, start=None):
    q = X.shape[1]
    beta = np.zeros(q) if start is None else np.array(start, dtype=float)
    trace = np.full(max_iter, np.nan)
    status, iters = _newton(X, y, w, beta, ridge, max_iter, tol, SEPARATION_BOUND, trace)
    return beta, status, trace[: max(iters, 1)]


def fit_logistic(X, y, obs_weights=None, *, max_iter: int = 100, tol: float = 1e-8) -> Coefficients:
    """Weighted maximum likelihood logistic fit by Newton-Raphson (IRLS).

    Non-intercept columns with zero variance are dropped and get a zero
    coefficient. Raises :class:`SeparationError` as soon as a coefficient
    exceeds 30 in absolute value and :class:`ConvergenceError` when the score
    max-norm is still above ``tol`` after ``max_iter`` iterations.
    """
    X, y, w = _prep(X, y, obs_weights)
    ybar = np.sum(w * y) / np.sum(w)
    if ybar <= 0.0 or ybar >= 1.0:
        raise SeparationError("response is constant: the likelihood has no maximum")
    q = X.shape[1]
    keep = np.ones(q, dtype=bool)
    if q > 1:
        keep[1:] = np.ptp(X[:, 1:], axis=0) > 0
    Xk = np.ascontiguousarray(X[:, keep])
    try:
        beta, status, trace = _newton_fit(Xk, y, w, 0.0, max_iter, tol)
    except np.linalg.LinAlgError as exc:
        raise SeparationError(f"singular information matrix: {exc}") from None
    if status == 1:
        raise SeparationError(
            "coefficient exceeded |30|: the data look separated; use a penalized fit"
        )
    if status == 2 or not np.all(np.isfinite(beta)):
        raise ConvergenceError(f"no convergence in {max_iter} iterations", trace)
    out = np.zeros(q)
    out[keep] = beta
    return Coefficients(out, trace=tuple(trace))


def fit_initial(X, y, obs_weights=None) -> Coefficients:
    """Root-n initial estimate: unpenalized fit, ridge fallback on failure."""
    try:
        return fit_logistic(X, y, obs_weights)
    except (SeparationError, ConvergenceError):
        pass
    X, y, w = _prep(X, y, obs_weights)
    beta, status, trace = _newton_fit(X, y, w, RIDGE_FALLBACK, 200, 1e-8)
    if status != 0:
        raise ConvergenceError("ridge fallback did not converge", trace)
    return Coefficients(beta, ridge_fallback=True, trace=tuple(trace))


def adaptive_penalty(initial: Coefficients, gamma: float) -> tuple[np.ndarray, bool]:
    """Per-coordinate L1 weights |b~_j|^-gamma, capped; index 0 is unpenalized."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    a = np.abs(initial.values)
    with np.errstate(divide="ignore"):
        pen = np.where(a > 0, a ** (-gamma), np.inf)
    capped = bool(np.any(pen[1:] > PENALTY_CAP))
    pen = np.minimum(pen, PENALTY_CAP)
    pen[0] = 0.0
    return pen, capped


def lambda_max(X, y, obs_weights, penalty_weights) -> float:
    """Smallest penalty at which every non-intercept coefficient is zero."""
    X, y, w = _prep(X, y, obs_weights)
    ybar = np.sum(w * y) / np.sum(w)
    if ybar <= 0 or ybar >= 1:
        raise SeparationError("response is constant; intercept-only model is degenerate")
    g = X[:, 1:].T @ (w * (y - ybar)) / np.sum(w)
    pen = np.asarray(penalty_weights)[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pen > 0, np.abs(g) / pen, 0.0)
    # a hair above the boundary so rounding in the soft-threshold cannot leave
    # a 1e-17 coefficient (and an extra BIC degree of freedom) at the top
    return float(np.max(ratio)) * (1.0 + 1e-9) if ratio.size else 0.0


def make_lambda_grid(lam_max: float, n_lambda: int = 50, min_ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced descending grid from ``lam_max`` to ``min_ratio * lam_max``."""
    if lam_max <= 0:
        return np.array([0.0])
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambda)


def _penalized(X, y, w, start, lam, pen, tol, max_sweeps):
    beta = np.array(start, dtype=float)
    trace = np.full(max_sweeps + 1, np.nan)
    sweeps = _prox_newton(X, y, w, beta, float(lam), pen, 0.0, tol, max_sweeps, trace)
    return beta, trace[: sweeps + 1]


def fit_lasso_path(X, y, obs_weights=None, gamma: float = 1.0, lambda_grid=None, *,
                   initial: Coefficients | None = None, start=None,
                   n_lambda: int = 50, min_ratio: float = 1e-4,
                   tol: float = 1e-7, max_sweeps: int = 1000) -> list[Coefficients]:
    """Adaptive LASSO fits along a descending penalty grid with warm starts."""
    X, y, w = _prep(X, y, obs_weights)
    if initial is None:
        initial = fit_initial(X, y, w)
    pen, capped = adaptive_penalty(initial, gamma)
    if lambda_grid is None:
        lambda_grid = make_lambda_grid(lambda_max(X, y, w, pen), n_lambda, min_ratio)
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(np.diff(grid) > 0):
        raise ValueError("lambda grid must be sorted in descending order")
    if start is None:
        ybar = np.clip(np.sum(w * y) / np.sum(w), 1e-12, 1 - 1e-12)
        beta = np.zeros(X.shape[1])
        beta[0] = math.log(ybar / (1 - ybar))
    else:
        beta = np.asarray(start, dtype=float)
    path = []
    for lam in grid:
        beta, trace = _penalized(X, y, w, beta, lam, pen, tol, max_sweeps)
        path.append(Coefficients(
            beta, lam=float(lam), gamma=gamma, penalty_weights=pen, capped=capped,
            ridge_fallback=initial.ridge_fallback, trace=tuple(trace),
        ))
    return path


def bic(coef: Coefficients, X, y, obs_weights=None) -> float:
    """-2 x weighted log-likelihood + df log(n_eff), weights at mean one."""
    X, y, w = _prep(X, y, obs_weights)
    n_eff = float(np.sum(w))
    return -2.0 * n_eff * float(_mean_loglik(X, y, w, np.ascontiguousarray(coef.values))) \
        + coef.df * math.log(n_eff)


def select_lambda_bic(path, X, y, obs_weights=None) -> Coefficients:
    """Path member with the smallest BIC; ties go to the sparser (earlier) fit."""
    if not path:
        raise ValueError("empty path")
    best, best_val = None, math.inf
    for coef in path:
        v = bic(coef, X, y, obs_weights)
        if v < best_val:
            best, best_val = coef, v
    return best


def fit_adaptive_lasso(X, y, obs_weights=None, gamma: float = 1.0, lambda_grid=None, *,
                       initial: Coefficients | None = None, start=None,
                       n_lambda: int = 50, min_ratio: float = 1e-4) -> Coefficients:
    """Adaptive LASSO logistic fit, penalty chosen by BIC along the grid.

    The intercept is never penalized. ``initial`` overrides the unpenalized
    initial estimate that anchors the adaptive weights; ``start`` warm-starts
    the first grid point.
    """
    X, y, w = _prep(X, y, obs_weights)
    path = fit_lasso_path(X, y, w, gamma, lambda_grid, initial=initial, start=start,
                          n_lambda=n_lambda, min_ratio=min_ratio)
    return _check_bounded(select_lambda_bic(path, X, y, w))


def _check_bounded(coef: Coefficients) -> Coefficients:
    if np.any(np.abs(coef.values) > SEPARATION_BOUND):
        raise SeparationError(
            f"selected fit has a coefficient beyond |{SEPARATION_BOUND:g}|: "
            "the data look separated")
    return coef


def refit_at_lambda(X, y, obs_weights, gamma: float, lam: float, *, start=None) -> Coefficients:
    """Adaptive LASSO at a fixed penalty with weights re-anchored at the
    (weighted) unpenalized initial fit. Used for perturbation refits."""
    X, y, w = _prep(X, y, obs_weights)
    initial = fit_initial(X, y, w)
    return _check_bounded(fit_lasso_path(X, y, w, gamma, [lam], initial=initial, start=start)[0])


def predict_proba(coef: Coefficients, X) -> np.ndarray:
    eta = np.asarray(X, dtype=float) @ coef.values
    return 0.5 * (1.0 + np.tanh(0.5 * eta))
