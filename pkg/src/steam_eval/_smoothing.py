"""Gaussian Nadaraya-Watson kernel sums (numba).

Kernel values further than ``WINDOW`` bandwidths from the query are taken as
exactly zero (``exp(-32)`` is about 1e-14), so supports are kept sorted and
only a window is scanned. Normalizing constants cancel in every ratio and are
omitted.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

WINDOW = 8.0
_REANCHOR = 32


@njit(cache=True)
def nw1d_sums(support, num_w, den_w, h, queries):
    """Kernel-weighted sums at arbitrary queries; ``support`` sorted ascending."""
    m = queries.shape[0]
    num = np.zeros(m)
    den = np.zeros(m)
    reach = WINDOW * h
    for i in range(m):
        q = queries[i]
        lo = np.searchsorted(support, q - reach)
        hi = np.searchsorted(support, q + reach, side="right")
        a = 0.0
        b = 0.0
        for j in range(lo, hi):
            u = (support[j] - q) / h
            k = math.exp(-0.5 * u * u)
            a += k * num_w[j]
            b += k * den_w[j]
        num[i] = a
        den[i] = b
    return num, den


@njit(cache=True)
def nw1d_grid_sums(support, num_w, den_w, h, n_grid):
    """Kernel sums at the equally spaced queries ``k / n_grid``, k = 1..n_grid.

    Each support point's Gaussian is swept across the grid by a multiplicative
    recurrence, re-anchored with a direct ``exp`` every few steps to keep the
    relative rounding error near 1e-13.
    """
    num = np.zeros(n_grid)
    den = np.zeros(n_grid)
    delta = 1.0 / n_grid
    inv2h2 = 0.5 / (h * h)
    step2 = math.exp(-delta * delta / (h * h))
    reach = WINDOW * h
    for j in range(support.shape[0]):
        x = support[j]
        k_lo = max(1, int(math.ceil((x - reach) * n_grid)))
        k_hi = min(n_grid, int(math.floor((x + reach) * n_grid)))
        if k_lo > k_hi:
            continue
        a = num_w[j]
        b = den_w[j]
        k = k_lo
        while k <= k_hi:
            d = k / n_grid - x
            g = math.exp(-d * d * inv2h2)
            r = math.exp(-(2.0 * d * delta + delta * delta) * inv2h2)
            k_end = min(k + _REANCHOR, k_hi + 1)
            for kk in range(k - 1, k_end - 1):
                num[kk] += g * a
                den[kk] += g * b
                g *= r
                r *= step2
            k = k_end
    return num, den


@njit(cache=True)
def nw2d_sums(pa, pb, s, ha, hb, qa, qb):
    """Product-Gaussian sums over pooled points sorted by ``pa``."""
    m = qa.shape[0]
    num = np.zeros(m)
    den = np.zeros(m)
    ra = WINDOW * ha
    rb = WINDOW * hb
    for i in range(m):
        lo = np.searchsorted(pa, qa[i] - ra)
        hi = np.searchsorted(pa, qa[i] + ra, side="right")
        a = 0.0
        b = 0.0
        for j in range(lo, hi):
            db = pb[j] - qb[i]
            if abs(db) > rb:
                continue
            ua = (pa[j] - qa[i]) / ha
            ub = db / hb
            k = math.exp(-0.5 * (ua * ua + ub * ub))
            a += k * s[j]
            b += k
        num[i] = a
        den[i] = b
    return num, den


@njit(cache=True)
def nw2d_grad_terms(pa, pb, s, ha, hb, qa, qb, dpb):
    """Pieces of d pi_hat / d beta for each query.

    Returns (pi_raw, den, A, C1, C2) with
    c_ij = (s_j - pi_i) K_ij u_ij, A_i = sum_j c_ij dpb_j,
    C1_i = sum_j c_ij, C2_i = sum_j c_ij u_ij, u_ij = (pb_j - qb_i) / hb.
    """
    m = qa.shape[0]
    q = dpb.shape[1]
    num, den = nw2d_sums(pa, pb, s, ha, hb, qa, qb)
    pi = np.empty(m)
    A = np.zeros((m, q))
    C1 = np.zeros(m)
    C2 = np.zeros(m)
    ra = WINDOW * ha
    rb = WINDOW * hb
    for i in range(m):
        pi[i] = num[i] / den[i] if den[i] > 0 else np.nan
        lo = np.searchsorted(pa, qa[i] - ra)
        hi = np.searchsorted(pa, qa[i] + ra, side="right")
        for j in range(lo, hi):
            db = pb[j] - qb[i]
            if abs(db) > rb:
                continue
            ua = (pa[j] - qa[i]) / ha
            ub = db / hb
            k = math.exp(-0.5 * (ua * ua + ub * ub))
            c = (s[j] - pi[i]) * k * ub
            C1[i] += c
            C2[i] += c * ub
            for t in range(q):
                A[i, t] += c * dpb[j, t]
    return pi, den, A, C1, C2


def sort_support(points, *arrays):
    """Sort ``points`` ascending and permute companion arrays alike."""
    order = np.argsort(points, kind="stable")
    return (np.ascontiguousarray(points[order]),) + tuple(
        np.ascontiguousarray(a[order]) for a in arrays
    )
