"""Small shared numerical helpers: circle arithmetic, bracketed roots,
sequence acceleration, log-space reductions, compensated sums, Wilson CIs.

All helpers are arithmetic-generic where that is cheap (they work for floats
and mpmath mpf alike); array-specific paths use numpy explicitly.
"""

import math

import numpy as np

from .errors import RootNotBracketed


def wrap(x):
    """x mod 1, mapped into [0, 1). Works for floats, mpf and numpy arrays."""
    y = x % 1
    if isinstance(y, np.ndarray):
        return np.where(y >= 1.0, y - 1.0, y)
    # Guard x % 1 == 1.0 which float rounding can produce for tiny negative x.
    return y - 1 if y >= 1 else y


def ccw_dist(a, b):
    """Counterclockwise distance from a to b on the circle, in [0, 1)."""
    return wrap(b - a)


def signed_gap(a, b):
    """Shortest signed displacement from a to b, in (-1/2, 1/2]."""
    d = wrap(b - a)
    if isinstance(d, np.ndarray):
        return np.where(d > 0.5, d - 1.0, d)
    return d - 1 if d > 0.5 else d


def in_ccw_arc(x, left, right):
    """True if x lies in the half-open arc [left, right) taken counterclockwise."""
    return ccw_dist(left, x) < ccw_dist(left, right)


def bisect_root(f, lo, hi, iterations=200):
    """Bisection for a sign change of f on [lo, hi].

    Works in whatever arithmetic lo/hi carry (floats or mpf); `iterations`
    halvings give ~iterations bits beyond the initial bracket.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise RootNotBracketed(f"no sign change on [{lo}, {hi}]")
    for _ in range(iterations):
        mid = (lo + hi) / 2
        fm = f(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return (lo + hi) / 2


def aitken(seq):
    """One Aitken delta-squared pass over a sequence (list/array -> list).

    Entry i of the result accelerates seq[i], seq[i+1], seq[i+2]; degenerate
    second differences fall back to the raw middle entry.
    """
    out = []
    for i in range(len(seq) - 2):
        d1 = seq[i + 1] - seq[i]
        d2 = seq[i + 2] - 2 * seq[i + 1] + seq[i]
        if d2 == 0 or not math.isfinite(d2):
            out.append(seq[i + 2])
        else:
            out.append(seq[i] - d1 * d1 / d2)
    return out


def logsumexp(log_terms):
    """log(sum(exp(t))) with max shift; numpy array in, float out."""
    t = np.asarray(log_terms, dtype=float)
    m = np.max(t)
    if not np.isfinite(m):
        return m
    return float(m + np.log(np.sum(np.exp(t - m))))


def compensated_sum(values):
    """Kahan-Neumaier sum of an iterable of floats."""
    s = 0.0
    comp = 0.0
    for v in values:
        t = s + v
        if abs(s) >= abs(v):
            comp += (s - t) + v
        else:
            comp += (v - t) + s
        s = t
    return s + comp


def wilson_interval(successes, n, z=2.5758293035489004):
    """Wilson score interval for a binomial proportion.

    Default z is the two-sided 99% normal quantile. Returns (lo, hi).
    """
    if n <= 0:
        return (0.0, 1.0)
    phat = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (phat + z2 / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z2 / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def fit_log_slope(x, y):
    """Least-squares slope of log(y) against log(x); (slope, intercept)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    slope, intercept = np.linalg.lstsq(A, ly, rcond=None)[0]
    return float(slope), float(intercept)


def fit_slope(x, y):
    """Least-squares slope of y against x; (slope, intercept)."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    A = np.vstack([xa, np.ones_like(xa)]).T
    slope, intercept = np.linalg.lstsq(A, ya, rcond=None)[0]
    return float(slope), float(intercept)
