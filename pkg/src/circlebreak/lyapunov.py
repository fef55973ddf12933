"""Orbit growth sums and their partition sandwiches.

For an orbit z_j = T^j(z_0) and an exponent s > 0, the growth sum at
horizon n is

    lambda_s(z_0, n) = 1 + sum_{k=1}^{n-1} prod_{j=k}^{n-1} |T'(z_j)|^s,

the backward-maximal variant is

    lambda_hat(z_0, n) = max_{1 <= i <= n-1} sum_{k=1}^{i} prod_{j=k}^{i} |T'(z_j)|,

and the level-n partition proxy is

    s_n_beta(z_0, n, beta) = |I(z_0)|^beta * sum_{I in P_n} |I|^(-beta),

where P_n is the level-n dynamical partition based at the break point and
I(z_0) is its element containing z_0.  All three are evaluated in log
space (max-shifted, compensated summation), so horizons of a few thousand
steps with derivative swings of e^{+-v} stay exact to roundoff.

sandwich_check compares lambda_beta(z_0, q_n) against the model
|I(z_0)|^beta * lam^n, where lam estimates the transfer-operator
eigenvalue at weight exponent -beta.  Two facts about these maps shape
the report:

* The per-level ratios oscillate with period 2 (the pair renormalization
  of a map with one break is a 2-cycle), so the fitted bracket constants
  are reported as a (min, max) range over the whole level window, and
  same-parity levels should be compared when judging drift.
* lam is taken from partition length sums (Z_l = sum |I|^(-beta) over
  P_l, lam = sqrt(Z_l / Z_{l-2})), a parity-free route that needs no
  symbolic coding and works for any continued-fraction head.

clt_condition_check tabulates lambda_p / lambda_2^{p/2} along q_n
horizons; for p > 2 this decays geometrically and the fitted per-level
factor is compared against the eigenvalue prediction
lam_{-p} / lam_{-2}^{p/2}.

A caution on plain-sounding monotonicity: lambda_s(z_0, n) is NOT
monotone in n whenever the orbit enters a contracting stretch while the
sum is large (lambda(n+1) = 1 + |T'(z_n)|^s * lambda(n) drops as soon as
lambda(n) > 1/(1 - |T'(z_n)|^s)), and lambda_hat can exceed lambda_1 at
the same horizon because the interior maximum remembers peaks the final
product has already contracted away.  Only lambda_s >= 1 and
lambda_s(., 1) = 1 hold unconditionally; growth along the q_n
subsequence is what the sandwich quantifies.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    OrbitHitsBreak,
    OrbitOfBreak,
    PrecisionExhausted,
)
from .numerics import compensated_sum, fit_slope, wrap
from .partition import DynamicalPartition
from .symbolic import EigenvalueEstimate


def _lse(log_terms):
    """log(sum(exp(t))): max shift + compensated summation of the exps."""
    t = np.asarray(log_terms, dtype=float)
    if t.size == 0:
        return -math.inf
    m = float(np.max(t))
    if not math.isfinite(m):
        return m
    return m + math.log(compensated_sum(np.exp(t - m)))


def log_deriv_orbit(break_map, z0, n):
    """ln |T'(z_j)| for z_j = T^j(z_0), j = 0 .. n-1, as a float array.

    Raises OrbitHitsBreak if some z_j lands exactly on a break point
    (the one-sided derivatives differ there, so the cocycle is ambiguous)
    and PrecisionExhausted if a derivative fails to be positive.
    """
    if n < 1:
        raise ConfigError("orbit horizon must be >= 1")
    z0 = wrap(float(z0))
    breaks = set(float(b) for b in break_map.break_points())
    pts = break_map.orbit(z0, n - 1)
    out = np.empty(n, dtype=float)
    for j in range(n):
        z = float(pts[j])
        if z in breaks:
            raise OrbitHitsBreak(
                f"orbit point T^{j}(z0) = {z} is a break point; the "
                f"derivative along the orbit is one-sided there"
            )
        d = float(break_map.deriv(pts[j]))
        if d <= 0.0:
            raise PrecisionExhausted(f"non-positive derivative {d} at T^{j}(z0)")
        out[j] = math.log(d)
    return out


def _logs_for(break_map, z0, n, logs):
    if logs is None:
        return log_deriv_orbit(break_map, z0, n)
    logs = np.asarray(logs, dtype=float)
    if logs.size < n:
        raise ConfigError(
            f"precomputed orbit logs cover {logs.size} steps, need {n}"
        )
    return logs


def log_lambda_s(break_map, z0, n, s, logs=None):
    """ln lambda_s(z_0, n).  logs may carry a precomputed log_deriv_orbit."""
    if n < 1:
        raise ConfigError("horizon must be >= 1")
    if n == 1:
        return 0.0
    L = _logs_for(break_map, z0, n, logs)
    # suffix sums A_k = sum_{j=k}^{n-1} L_j for k = 1..n-1
    tail = L[1:n][::-1]
    suffix = np.cumsum(tail)[::-1]
    terms = np.concatenate(([0.0], s * suffix))
    return _lse(terms)


def lambda_s(break_map, z0, n, s, logs=None):
    """Growth sum 1 + sum_k prod_{j=k}^{n-1} |T'(z_j)|^s; always >= 1."""
    return math.exp(log_lambda_s(break_map, z0, n, s, logs=logs))


def log_lambda_hat(break_map, z0, n, logs=None):
    """ln lambda_hat(z_0, n); -inf when n = 1 (empty maximum)."""
    if n < 1:
        raise ConfigError("horizon must be >= 1")
    if n == 1:
        return -math.inf
    L = _logs_for(break_map, z0, n, logs)
    # B_i = sum_{k=1}^{i} prod_{j=k}^{i} |T'(z_j)| obeys
    # B_i = |T'(z_i)| (1 + B_{i-1}); in logs that is L_i + logaddexp(0, .).
    ln_b = L[1]
    best = ln_b
    for i in range(2, n):
        ln_b = L[i] + np.logaddexp(0.0, ln_b)
        if ln_b > best:
            best = ln_b
    return float(best)


def lambda_hat(break_map, z0, n, logs=None):
    """Largest backward product sum over interior horizons below n."""
    v = log_lambda_hat(break_map, z0, n, logs=logs)
    return 0.0 if v == -math.inf else math.exp(v)


def cocycle_gap(break_map, z0, n, t, logs=None):
    """Relative gap in the exact splitting of lambda_1 at horizon n + t:

        lambda_1(z_0, n+t) = |DT^t(z_n)| lambda_1(z_0, n) + lambda_1(z_n, t).

    Returns |lhs - rhs| / lhs; exact arithmetic gives 0.
    """
    if n < 1 or t < 1:
        raise ConfigError("both split horizons must be >= 1")
    L = _logs_for(break_map, z0, n + t, logs)
    lhs = math.exp(log_lambda_s(break_map, z0, n + t, 1.0, logs=L))
    ln_block = float(np.sum(L[n : n + t]))  # ln |DT^t(z_n)|
    ln_first = ln_block + log_lambda_s(break_map, z0, n, 1.0, logs=L)
    # lambda_1(z_n, t) reuses the same orbit logs shifted by n
    second = math.exp(log_lambda_s(break_map, z0, t, 1.0, logs=L[n:]))
    rhs = math.exp(ln_first) + second
    return abs(lhs - rhs) / lhs


def s_n_beta(break_map, z0, n, beta, cf=None, part=None):
    """Partition proxy |I(z_0)|^beta * sum_{I in P_n(x_b)} |I|^(-beta).

    P_n(x_b) is the level-n dynamical partition based at the break point;
    its elements are exactly the q_{n+1} level-n spans together with the
    q_n level-(n+1) spans, so the sum runs over all of them.  At beta = 0
    the value is q_n + q_{n+1} exactly.  Raises OrbitOfBreak when z_0 is
    an endpoint (then it lies on the orbit of the base point and the
    containing element is ambiguous).
    """
    if part is None:
        part = DynamicalPartition.build(break_map, n, cf=cf)
    z = wrap(float(z0))
    if z in part.endpoint_set():
        raise OrbitOfBreak(
            f"z0 = {z} is an endpoint of the level-{n} partition"
        )
    lens = np.asarray(part.lengths(), dtype=float)
    ln_i0 = math.log(lens[part.locate(z)])
    return math.exp(beta * ln_i0 + _lse(-beta * np.log(lens)))


def length_sum_eigenvalue(break_map, exponent, level, cf=None, base=None):
    """Transfer-eigenvalue estimate from partition length sums.

    Z_l = sum_{I in P_l} |I|^exponent grows like lam^l where lam is the
    eigenvalue at weight exponent `exponent` (so pass -beta for the
    lambda_{-beta} of the growth sandwiches).  The step-2 ratio
    sqrt(Z_level / Z_{level-2}) is parity-free; the residual reported is
    the gap to the same ratio one level earlier.  Needs level >= 4.

    Anchors: exponent 1 gives 1 exactly (each level tiles the circle);
    exponent 0 gives the golden ratio (pure element counting).
    """
    if level < 4:
        raise ConfigError("length-sum eigenvalue needs level >= 4")
    ln_z = {}
    # deepest first: that build measures a continued fraction long enough
    # for every shallower level
    for lvl in range(level, level - 4, -1):
        part = DynamicalPartition.build(break_map, lvl, base=base, cf=cf)
        if cf is None:
            cf = part.cf
        lens = np.asarray(part.lengths(), dtype=float)
        ln_z[lvl] = _lse(exponent * np.log(lens))
    value = math.exp(0.5 * (ln_z[level] - ln_z[level - 2]))
    alt = math.exp(0.5 * (ln_z[level - 1] - ln_z[level - 3]))
    return EigenvalueEstimate(
        beta=float(exponent),
        depth=level,
        value=value,
        method="partition-length-sums",
        residual=abs(value - alt),
        iterations=0,
        sequence=(alt, value),
    )


@dataclass(frozen=True)
class LyapunovReport:
    """Per-level sandwich table for one (z_0, beta) pair.

    rows hold, per level n: q_n, the growth sums lambda_beta(z_0, q_n)
    and lambda_beta(z_0, q_n + q_{n+1}), lambda_hat(z_0, q_{n+1}), the
    partition proxy s_n_beta, the containing-element length, the model
    ratio r_n = lambda_beta / (|I|^beta lam^n), and the proxy ratio
    lambda_beta(q_n + q_{n+1}) / s_n_beta.  bracket_lo/hi and
    proxy_lo/hi are the fitted sandwich constants (the extremes of those
    two ratio columns); nothing about them is assumed, they are measured.
    """

    z0: float
    beta: float
    lambda_est: float
    lambda_method: str
    ratio_bound: float
    rows: tuple = field(default_factory=tuple)
    bracket_lo: float = math.nan
    bracket_hi: float = math.nan
    proxy_lo: float = math.nan
    proxy_hi: float = math.nan
    ratio_spread: float = math.nan
    passed: bool = False
    stabilization_level: int = -1

    def to_rows(self):
        return [dict(r) for r in self.rows]


def sandwich_check(break_map, z0, beta, n_range, cf=None, lambda_est=None,
                   ratio_bound=50.0):
    """Sandwich lambda_beta(z_0, q_n) between partition models, per level.

    For each n in n_range the ratio r_n = lambda_beta(z_0, q_n) /
    (|I^(n)(z_0)|^beta * lam^n) is tabulated; the check passes when
    max r_n / min r_n <= ratio_bound over the window.  lam defaults to
    the parity-free length-sum estimate at the deepest requested level.
    The same table carries the proxy ratios lambda_beta(z_0, q_n+q_{n+1})
    / s_n_beta(z_0, n, beta), whose extremes estimate the proxy sandwich
    constants.  stabilization_level is the first level from which the
    tail of the r_n column already fits within ratio_bound.
    """
    levels = sorted(set(int(n) for n in n_range))
    if len(levels) < 2:
        raise ConfigError("sandwich needs at least two levels")
    if levels[0] < 1:
        raise ConfigError("sandwich levels must be >= 1")
    z = wrap(float(z0))

    parts = {}
    for n in sorted(levels, reverse=True):
        parts[n] = DynamicalPartition.build(break_map, n, cf=cf)
        if cf is None:
            cf = parts[n].cf

    if lambda_est is None:
        est = length_sum_eigenvalue(break_map, -beta, levels[-1], cf=cf)
        lam, lam_method = est.value, est.method
    elif isinstance(lambda_est, EigenvalueEstimate):
        lam, lam_method = lambda_est.value, lambda_est.method
    else:
        lam, lam_method = float(lambda_est), "caller-supplied"
    if not (lam > 0.0 and math.isfinite(lam)):
        raise ConfigError(f"eigenvalue estimate must be positive, got {lam}")

    deep_q = parts[levels[-1]].q
    horizon = deep_q[0] + deep_q[1]
    logs = log_deriv_orbit(break_map, z, horizon)

    rows = []
    ratios = []
    for n in levels:
        part = parts[n]
        q_n, q_n1 = part.q
        lens = np.asarray(part.lengths(), dtype=float)
        if z in part.endpoint_set():
            raise OrbitOfBreak(
                f"z0 = {z} is an endpoint of the level-{n} partition"
            )
        i_len = float(lens[part.locate(z)])
        ln_lam_beta = log_lambda_s(break_map, z, q_n, beta, logs=logs)
        lam_beta = math.exp(ln_lam_beta)
        lam_beta_qq = math.exp(
            log_lambda_s(break_map, z, q_n + q_n1, beta, logs=logs)
        )
        hat_next = lambda_hat(break_map, z, q_n1, logs=logs)
        s_val = s_n_beta(break_map, z, n, beta, part=part)
        ln_r = ln_lam_beta - beta * math.log(i_len) - n * math.log(lam)
        r_n = math.exp(ln_r)
        proxy_ratio = lam_beta_qq / s_val
        row = {
            "n": n,
            "q_n": q_n,
            "lambda_beta": lam_beta,
            "lambda_beta_qq": lam_beta_qq,
            "lambda_hat_next": hat_next,
            "s_n_beta": s_val,
            "containing_len": i_len,
            "sandwich_ratio": r_n,
            "proxy_ratio": proxy_ratio,
        }
        for key, val in row.items():
            if key == "n":
                continue
            if not (val >= 0.0 and math.isfinite(val)):
                raise PrecisionExhausted(
                    f"non-finite or negative report entry {key} = {val} "
                    f"at level {n}"
                )
        if lam_beta < 1.0:
            raise PrecisionExhausted(
                f"growth sum {lam_beta} < 1 at level {n}; the sum is "
                f"1 plus positive terms, so precision has collapsed"
            )
        rows.append(row)
        ratios.append(r_n)

    ratios = np.asarray(ratios, dtype=float)
    proxy = np.asarray([r["proxy_ratio"] for r in rows], dtype=float)
    spread = float(np.max(ratios) / np.min(ratios))
    passed = spread <= ratio_bound
    stab = -1
    for i in range(len(levels)):
        tail = ratios[i:]
        if tail.size >= 2 and float(np.max(tail) / np.min(tail)) <= ratio_bound:
            stab = levels[i]
            break
    return LyapunovReport(
        z0=z,
        beta=float(beta),
        lambda_est=lam,
        lambda_method=lam_method,
        ratio_bound=float(ratio_bound),
        rows=tuple(rows),
        bracket_lo=float(np.min(ratios)),
        bracket_hi=float(np.max(ratios)),
        proxy_lo=float(np.min(proxy)),
        proxy_hi=float(np.max(proxy)),
        ratio_spread=spread,
        passed=passed,
        stabilization_level=stab,
    )


def hat_bound_fit(break_map, z0, n_range, cf=None, lambda_est=None):
    """Fit lambda_hat(z_0, q_{n+1}) against the model C * n * lam^n.

    lam defaults to the length-sum eigenvalue at exponent -1.  Returns a
    dict with per-level rows (n, q_{n+1}, hat, fitted C_n) and the
    least-squares slope of ln C_n against n.  The model is an upper
    bound, so the bound is verified as long as C_n does not escape
    upward (slope <= 0 up to noise); a negative slope means the bound
    holds with room to spare, which is what the pair maps show (the
    model drops the containing-interval decay).
    """
    levels = sorted(set(int(n) for n in n_range))
    if len(levels) < 3:
        raise ConfigError("bound fit needs at least three levels")
    z = wrap(float(z0))
    parts = {}
    for n in sorted(levels, reverse=True):
        parts[n] = DynamicalPartition.build(break_map, n, cf=cf)
        if cf is None:
            cf = parts[n].cf
    if lambda_est is None:
        lam = length_sum_eigenvalue(break_map, -1.0, levels[-1], cf=cf).value
    elif isinstance(lambda_est, EigenvalueEstimate):
        lam = lambda_est.value
    else:
        lam = float(lambda_est)
    horizon = parts[levels[-1]].q[1]
    logs = log_deriv_orbit(break_map, z, horizon)
    rows = []
    for n in levels:
        q_n1 = parts[n].q[1]
        ln_hat = log_lambda_hat(break_map, z, q_n1, logs=logs)
        ln_c = ln_hat - math.log(n) - n * math.log(lam)
        rows.append({
            "n": n,
            "q_next": q_n1,
            "lambda_hat": math.exp(ln_hat),
            "bound_const": math.exp(ln_c),
        })
    slope, _ = fit_slope(levels, [math.log(r["bound_const"]) for r in rows])
    return {"rows": rows, "log_slope": slope, "lambda_est": lam}


@dataclass(frozen=True)
class CltConditionReport:
    """Decay table for lambda_p / lambda_2^{p/2} along q_n horizons."""

    z0: float
    p: float
    rows: tuple = field(default_factory=tuple)
    fitted_factor: float = math.nan
    predicted_factor: float = math.nan
    strictly_decreasing: bool = False

    def to_rows(self):
        return [dict(r) for r in self.rows]


def clt_condition_check(break_map, z0, p, n_range, cf=None):
    """Tabulate the moment-ratio decay that drives the noise CLT.

    For p > 2 the ratio lambda_p(z_0, q_n) / lambda_2(z_0, q_n)^{p/2}
    must decay; its per-level factor is fitted by least squares and
    compared against the eigenvalue prediction
    lam_{-p} / lam_{-2}^{p/2} from partition length sums.  p = 2 is the
    degenerate anchor (the ratio is exactly 1 at every level).
    """
    if p < 2:
        raise ConfigError("moment exponent must be >= 2")
    levels = sorted(set(int(n) for n in n_range))
    if len(levels) < 3:
        raise ConfigError("decay fit needs at least three levels")
    z = wrap(float(z0))
    parts = {}
    for n in sorted(levels, reverse=True):
        parts[n] = DynamicalPartition.build(break_map, n, cf=cf)
        if cf is None:
            cf = parts[n].cf
    horizon = parts[levels[-1]].q[0]
    logs = log_deriv_orbit(break_map, z, horizon)
    rows = []
    ln_ratios = []
    for n in levels:
        q_n = parts[n].q[0]
        ln_p = log_lambda_s(break_map, z, q_n, p, logs=logs)
        ln_2 = log_lambda_s(break_map, z, q_n, 2.0, logs=logs)
        ln_ratio = ln_p - 0.5 * p * ln_2
        rows.append({
            "n": n,
            "q_n": q_n,
            "lambda_p": math.exp(ln_p),
            "lambda_2": math.exp(ln_2),
            "ratio": math.exp(ln_ratio),
        })
        ln_ratios.append(ln_ratio)
    slope, _ = fit_slope(levels, ln_ratios)
    fitted = math.exp(slope)
    if p == 2.0:
        predicted = 1.0
    else:
        top = levels[-1]
        lam_p = length_sum_eigenvalue(break_map, -p, top, cf=cf).value
        lam_2 = length_sum_eigenvalue(break_map, -2.0, top, cf=cf).value
        predicted = lam_p / lam_2 ** (0.5 * p)
    decreasing = all(
        ln_ratios[i + 1] < ln_ratios[i] for i in range(len(ln_ratios) - 1)
    )
    return CltConditionReport(
        z0=z,
        p=float(p),
        rows=tuple(rows),
        fitted_factor=fitted,
        predicted_factor=predicted,
        strictly_decreasing=decreasing,
    )


def partition_sum_plateau(break_map, beta, levels, cf=None, lambda_est=None):
    """Report D_l = sum_{I in P_l} |I|^(-beta) against the model lam^l.

    The normalized column D_l / lam^l settles onto two interleaved
    plateaus (one per level parity; the pair renormalization is a
    2-cycle), so the summary gives each parity its own mean and spread.
    Only boundedness and positivity are claims here; the plateau heights
    are scale conventions.
    """
    lvls = sorted(set(int(l) for l in levels))
    if len(lvls) < 4:
        raise ConfigError("plateau report needs at least four levels")
    if lambda_est is None:
        lam = length_sum_eigenvalue(break_map, -beta, lvls[-1], cf=cf).value
    elif isinstance(lambda_est, EigenvalueEstimate):
        lam = lambda_est.value
    else:
        lam = float(lambda_est)
    rows = []
    part_by = {}
    for lvl in sorted(lvls, reverse=True):
        part_by[lvl] = DynamicalPartition.build(break_map, lvl, cf=cf)
        if cf is None:
            cf = part_by[lvl].cf
    for lvl in lvls:
        part = part_by[lvl]
        lens = np.asarray(part.lengths(), dtype=float)
        ln_d = _lse(-beta * np.log(lens))
        norm = math.exp(ln_d - lvl * math.log(lam))
        rows.append({"level": lvl, "tail_sum": math.exp(ln_d),
                     "normalized": norm})
    summary = {}
    for parity, name in ((0, "even"), (1, "odd")):
        vals = [r["normalized"] for r in rows if r["level"] % 2 == parity]
        if vals:
            summary[name] = {
                "mean": float(np.mean(vals)),
                "spread": float(np.max(vals) - np.min(vals)),
                "count": len(vals),
            }
    return {"rows": rows, "lambda_est": lam, "parity_summary": summary}
