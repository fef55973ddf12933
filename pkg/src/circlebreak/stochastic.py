"""Noisy circle orbits and the normality experiment around them.

The perturbed dynamics is z_{k+1} = T(z_k) + sigma * xi_{k+1} mod 1 with
iid, mean-zero, compactly supported noise.  At weak noise the deviation
from the deterministic orbit splits into a linear-in-xi part

    L_n = xi_n + sum_{k=1}^{n-1} xi_k prod_{j=k}^{n-1} T'(z_j)

(the weights are the same suffix products that drive the growth sums)
and a quadratic remainder Q_n = (zbar_n - z_n - sigma L_n) / sigma^2.
The normalized process omega_n = (zbar_n - z_n)/(sigma sqrt(var L_n)),
with var L_n = Var(xi) * Lambda_2(z_0, n) computed exactly, is tested
for normality over many independent replicas.

Orbit tubes: around each deterministic point z_k a neighborhood A_k is
grown inside a fine two-sided partition (level 2 m + l + 1 for tube
level m): A_0 is the fine element containing z_0 and A_k is the image
T(A_{k-1}) widened by its left and right neighbor elements.  Every A_k
must stay inside the level-m two-sided element of z_k, and no backward
orbit point of the break lies in any tube's interior, so the noisy
orbit sees no break of the return iterate while it stays in the tubes.
Both facts are checked directly at build time, not assumed.

Replicas are deterministic and merge-order independent: replica r draws
from a counter-based stream keyed by (master seed, r), so identical
(seed, config) reruns are bit-identical regardless of batching.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from .errors import ConfigError, ConstructionFailure, UnwrapAmbiguityWarning
from .lyapunov import (
    lambda_hat,
    log_deriv_orbit,
    log_lambda_s,
)
from .numerics import ccw_dist, signed_gap, wilson_interval, wrap
from .partition import DynamicalPartition, TwoSidedPartition

_MASK64 = (1 << 64) - 1


def _stream(seed, index):
    """Counter-based generator for replica `index` under a master seed."""
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# -- noise models -----------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Mean-zero iid noise with compact support and p > 2 finite moments.

    kinds: "uniform" on [-scale, scale]; "rademacher" (+-scale);
    "truncated-gaussian" (standard normal conditioned on |Z| <= trunc,
    then multiplied by scale, so the support is [-scale*trunc, ..]).
    Moments that have closed forms use them; the truncated gaussian
    integrates numerically.  p is the moment order quoted in reports and
    used for the max-moment bounds; every kind here has ALL moments, so
    p only selects which ones are reported.
    """

    kind: str = "uniform"
    scale: float = 1.0
    p: float = 4.0
    trunc: float = 3.0

    def __post_init__(self):
        if self.kind not in ("uniform", "rademacher", "truncated-gaussian"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if not self.scale > 0.0:
            raise ConfigError("noise scale must be positive")
        if not self.p > 2.0:
            raise ConfigError("moment order p must exceed 2")
        if self.kind == "truncated-gaussian" and not self.trunc > 0.0:
            raise ConfigError("truncation level must be positive")

    @property
    def compact_support(self):
        return True

    @property
    def support_bound(self):
        """Smallest b with |xi| <= b almost surely."""
        if self.kind == "truncated-gaussian":
            return self.scale * self.trunc
        return self.scale

    def sample(self, rng, size):
        """Draw `size` values; deterministic given the generator state.

        The truncated gaussian inverts its CDF on uniform draws so the
        draw count never depends on the values (no rejection loop)."""
        if self.kind == "uniform":
            return rng.uniform(-self.scale, self.scale, size)
        if self.kind == "rademacher":
            return self.scale * (2.0 * rng.integers(0, 2, size) - 1.0)
        t = self.trunc
        lo = special.ndtr(-t)
        span = special.ndtr(t) - lo
        u = rng.random(size)
        return self.scale * special.ndtri(lo + span * u)

    def variance(self):
        if self.kind == "uniform":
            return self.scale ** 2 / 3.0
        if self.kind == "rademacher":
            return self.scale ** 2
        t = self.trunc
        phi_t = math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
        mass = 2.0 * special.ndtr(t) - 1.0
        return self.scale ** 2 * (1.0 - 2.0 * t * phi_t / mass)

    def _abs_cdf(self, x):
        """CDF of |xi| at x >= 0 (vectorized)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            return np.clip(x / self.scale, 0.0, 1.0)
        if self.kind == "rademacher":
            return np.where(x >= self.scale, 1.0, 0.0)
        t = self.trunc
        mass = 2.0 * special.ndtr(t) - 1.0
        z = np.clip(x / self.scale, 0.0, t)
        return (2.0 * special.ndtr(z) - 1.0) / mass

    def abs_moment(self, r):
        """E |xi|^r."""
        if self.kind == "uniform":
            return self.scale ** r / (r + 1.0)
        if self.kind == "rademacher":
            return self.scale ** r
        val, _ = integrate.quad(
            lambda x: r * x ** (r - 1.0) * (1.0 - self._abs_cdf(x)),
            0.0, self.support_bound, limit=200,
        )
        return val

    def max_abs_moment(self, r, n):
        """E max_{i<=n} |xi_i|^r for n iid draws.

        uniform: scale^r * n/(n+r) (the max of n uniforms);
        rademacher: scale^r exactly; truncated gaussian: numeric
        integral of r x^(r-1) (1 - F_|xi|(x)^n).
        """
        if n < 1:
            raise ConfigError("max-moment needs n >= 1")
        if self.kind == "uniform":
            return self.scale ** r * n / (n + r)
        if self.kind == "rademacher":
            return self.scale ** r
        val, _ = integrate.quad(
            lambda x: r * x ** (r - 1.0) * (1.0 - float(self._abs_cdf(x)) ** n),
            0.0, self.support_bound, limit=200,
        )
        return val

    def to_config(self):
        return {"kind": self.kind, "scale": self.scale, "p": self.p,
                "trunc": self.trunc}


# -- simulation -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StochasticOrbit:
    """One noisy orbit realization with its deterministic companion."""

    z0: float
    n: int
    sigma: float
    seed: int
    stream_index: int
    noise: NoiseModel
    zbar: np.ndarray = field(repr=False)   # length n+1
    xi: np.ndarray = field(repr=False)     # length n, xi[k-1] = xi_k
    det: np.ndarray = field(repr=False)    # length n+1
    map: object = field(default=None, repr=False)

    def verify(self):
        """Re-apply the defining recursion; True iff bit-identical."""
        z = self.zbar[0]
        for k in range(self.n):
            z = wrap(float(self.map(z)) + self.sigma * self.xi[k])
            if z != self.zbar[k + 1]:
                return False
        return True


def simulate(break_map, z0, n, sigma, noise, seed, stream_index=0):
    """Run zbar_{k+1} = T(zbar_k) + sigma xi_{k+1} mod 1 for n steps.

    sigma = 0 reproduces the deterministic orbit bit-for-bit (the same
    wrap is applied, and adding 0.0 is exact).  Fixed (seed,
    stream_index) gives bit-identical reruns.
    """
    if n < 1:
        raise ConfigError("horizon must be >= 1")
    if sigma < 0.0:
        raise ConfigError("noise level must be >= 0")
    z0 = wrap(float(z0))
    rng = _stream(seed, stream_index)
    xi = noise.sample(rng, n)
    zbar = np.empty(n + 1, dtype=float)
    zbar[0] = z0
    z = z0
    for k in range(n):
        z = wrap(float(break_map(z)) + sigma * xi[k])
        zbar[k + 1] = z
    det = np.asarray(break_map.orbit(z0, n), dtype=float)
    orbit = StochasticOrbit(
        z0=z0, n=n, sigma=float(sigma), seed=int(seed),
        stream_index=int(stream_index), noise=noise,
        zbar=zbar, xi=xi, det=det,
    )
    object.__setattr__(orbit, "map", break_map)
    return orbit


def _noise_matrix(noise, seed, n_replicas, n, threads=1):
    """(n_replicas, n) draws; row r comes from stream (seed, r).

    Rows are keyed by replica index alone, so the result is identical
    for any thread count; threads > 1 only parallelizes the filling.
    """
    out = np.empty((n_replicas, n), dtype=float)

    def fill(r):
        out[r] = noise.sample(_stream(seed, r), n)

    if threads > 1 and n_replicas > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(n_replicas)))
    else:
        for r in range(n_replicas):
            fill(r)
    return out


def _batch_paths(break_map, z0, xi, sigma):
    """Vectorized noisy orbits: xi is (N, n); returns (N, n+1) paths."""
    n_rep, n = xi.shape
    out = np.empty((n_rep, n + 1), dtype=float)
    z = np.full(n_rep, wrap(float(z0)), dtype=float)
    out[:, 0] = z
    for k in range(n):
        z = wrap(break_map(z) + sigma * xi[:, k])
        out[:, k + 1] = z
    return out


# -- linear term and remainder ----------------------------------------------


def linear_weights(break_map, z0, n, logs=None):
    """Suffix products w_k = prod_{j=k}^{n-1} |T'(z_j)|, k = 1..n (w_n = 1).

    These are the coefficients of xi_k in L_n.  Computed from log
    derivatives of the deterministic orbit; raises OrbitHitsBreak via
    the orbit helper when the orbit touches a break.
    """
    if n < 1:
        raise ConfigError("horizon must be >= 1")
    if logs is None:
        logs = log_deriv_orbit(break_map, z0, n)
    L = np.asarray(logs, dtype=float)[:n]
    w = np.empty(n, dtype=float)
    w[n - 1] = 1.0
    if n > 1:
        w[: n - 1] = np.exp(np.cumsum(L[1:][::-1])[::-1])
    return w


def linearized_noise(break_map, z0, xi, n=None, logs=None, noise=None):
    """L_n for realized draws xi, plus the exact var(L_n) when the noise
    model is supplied.

    L_n = sum_k xi_k w_k with the suffix-product weights; the variance
    of L_n under iid noise is Var(xi) * Lambda_2(z_0, n) exactly (the
    squared weights sum to the growth sum at exponent 2).
    """
    xi = np.asarray(xi, dtype=float)
    if n is None:
        n = xi.shape[-1]
    if xi.shape[-1] < n:
        raise ConfigError(f"need {n} draws, have {xi.shape[-1]}")
    w = linear_weights(break_map, z0, n, logs=logs)
    value = xi[..., :n] @ w
    var = None
    if noise is not None:
        var = noise.variance() * math.exp(
            log_lambda_s(break_map, z0, n, 2.0, logs=logs)
        )
    return value, var


def linearized_noise_path(break_map, z0, xi, n=None):
    """L_1..L_n by the forward recurrence L_{k+1} = L_k T'(z_k) + xi_{k+1}.

    An independent route to the same numbers as linearized_noise (which
    sums weighted draws); the two must agree to roundoff, and tests hold
    them to 1e-12 relative.
    """
    xi = np.asarray(xi, dtype=float)
    if n is None:
        n = len(xi)
    pts = break_map.orbit(wrap(float(z0)), n - 1) if n > 1 else [z0]
    out = np.empty(n, dtype=float)
    out[0] = xi[0]
    for k in range(1, n):
        out[k] = out[k - 1] * float(break_map.deriv(pts[k])) + xi[k]
    return out


def remainder(orbit):
    """Q_1..Q_n with Q_k = (unwrap(zbar_k - z_k) - sigma L_k) / sigma^2.

    Differences use the circle representative in (-1/2, 1/2]; a step
    with |difference| > 1/4 means the noisy orbit has left any small
    tube and the unwrapping is no longer trustworthy, so the step is
    flagged with UnwrapAmbiguityWarning (not fatal).
    """
    if orbit.sigma <= 0.0:
        raise ConfigError("remainder needs sigma > 0")
    l_path = linearized_noise_path(orbit.map, orbit.z0, orbit.xi, orbit.n)
    gaps = signed_gap(orbit.det[1:], orbit.zbar[1:])
    big = np.nonzero(np.abs(gaps) > 0.25)[0]
    if big.size:
        warnings.warn(
            f"{big.size} of {orbit.n} steps have |zbar - z| > 1/4 "
            f"(first at step {int(big[0]) + 1}); unwrapping is ambiguous "
            f"there", UnwrapAmbiguityWarning, stacklevel=2,
        )
    return (gaps - orbit.sigma * l_path) / orbit.sigma ** 2


def remainder_refinement(break_map, z0, n, sigma, noise, seed):
    """Q_n at sigma, sigma/2, sigma/4 with the same draws.

    If Q is first order in sigma around its weak-noise limit, the
    successive differences shrink by about one half; the ratio is
    reported, not assumed.
    """
    vals = []
    for s in (sigma, sigma / 2.0, sigma / 4.0):
        orb = simulate(break_map, z0, n, s, noise, seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnwrapAmbiguityWarning)
            vals.append(float(remainder(orb)[-1]))
    d1 = vals[1] - vals[0]
    d2 = vals[2] - vals[1]
    ratio = d2 / d1 if d1 != 0.0 else math.nan
    return {"sigma": sigma, "q_values": tuple(vals),
            "differences": (d1, d2), "ratio": ratio}


# -- orbit tubes -------------------------------------------------------------


@dataclass(eq=False)
class TubeFamily:
    """Neighborhoods A_0..A_{horizon} of the deterministic orbit points.

    slots[k] = (s_lo, s_hi): the tube is the union of fine-partition
    elements s_lo..s_hi (cyclic, inclusive); intervals[k] holds the
    endpoints as floats.  min_margin is the worst containment slack
    against the coarse (one-sided level-m) element, in units of the
    coarse length.
    """

    z0: float
    m_level: int
    l: int
    fine_level: int
    horizon: int
    fine: TwoSidedPartition
    coarse: DynamicalPartition
    slots: tuple
    intervals: tuple
    element_counts: tuple
    min_margin: float

    def contains(self, k, x):
        lo, hi = self.intervals[k]
        return ccw_dist(lo, x) < ccw_dist(lo, hi)

    def lengths(self):
        return np.array([ccw_dist(lo, hi) for lo, hi in self.intervals])


def build_tubes(break_map, z0, m_level, l=6, cf=None):
    """Grow the tube family at level m_level inside the fine two-sided
    partition of level 2*m_level + l + 1.

    A_0 is the fine element containing z_0; each A_k is T(A_{k-1})
    together with its left and right neighbor elements.  The build
    verifies, element by element:

    * z_k lies in A_k (the construction tracks the orbit);
    * A_k fits inside the level-m element containing z_k;
    * no backward orbit point x_{-j}, 0 <= j < q_{m+1}, is interior to
      any tube (those are the break points of the return iterate, so
      the return map is smooth across each tube).

    Any violation raises ConstructionFailure with the failing step.
    Containment needs a starting point whose orbit stays deep inside
    its elements: pick z0 with barycentric_scan at this level.  A deeper
    fine partition (larger l) buys slack at the cost of size.
    """
    if l < 4:
        raise ConfigError("fine-partition offset l must be >= 4")
    if m_level < 1:
        raise ConfigError("tube level must be >= 1")
    z0 = wrap(float(z0))
    fine_level = 2 * m_level + l + 1
    fine = TwoSidedPartition.build(break_map, fine_level, cf=cf)
    cf = fine.cf
    coarse = DynamicalPartition.build(break_map, m_level, cf=cf)
    q_m1 = coarse.q[1]
    horizon = q_m1 - 1
    n_fine = len(fine)
    idx_to_slot = {fine.true_index(s): s for s in range(n_fine)}
    forbidden = set(range(-(q_m1 - 1), 1))  # true indices of T^{q_{m+1}} breaks

    pts = fine.points

    def interval_of(s_lo, s_hi):
        return float(pts[s_lo]), float(pts[(s_hi + 1) % n_fine])

    def check_step(k, s_lo, s_hi, zk):
        lo, hi = interval_of(s_lo, s_hi)
        if not ccw_dist(lo, zk) < ccw_dist(lo, hi):
            raise ConstructionFailure(
                f"orbit point z_{k} = {zk} escaped its tube [{lo}, {hi})"
            )
        c_slot = coarse.locate(zk)
        c_lo = float(coarse.points[c_slot])
        c_len = float(ccw_dist(c_lo, coarse.points[(c_slot + 1) % len(coarse)]))
        off = ccw_dist(c_lo, lo)
        a_len = ccw_dist(lo, hi)
        margin = (c_len - off - a_len) / c_len
        if off > c_len or margin < 0.0:
            raise ConstructionFailure(
                f"tube A_{k} (length {a_len:.3e}, offset {off:.3e}) leaves "
                f"its level-{m_level} element (length {c_len:.3e}) at "
                f"margin {margin:.3e}"
            )
        count = (s_hi - s_lo) % n_fine + 1
        for j in range(1, count):
            t_idx = fine.true_index((s_lo + j) % n_fine)
            if t_idx in forbidden:
                raise ConstructionFailure(
                    f"backward orbit point x_{t_idx} is interior to tube "
                    f"A_{k}; the return iterate has a break inside"
                )
        return margin, count

    s_lo = s_hi = fine.locate(z0)
    zk = z0
    margin, count = check_step(0, s_lo, s_hi, z0)
    slots = [(s_lo, s_hi)]
    intervals = [interval_of(s_lo, s_hi)]
    counts = [count]
    min_margin = margin
    for k in range(1, horizon + 1):
        zk = float(break_map(zk))
        i_lo = fine.true_index(s_lo)
        i_hi = fine.true_index((s_hi + 1) % n_fine)
        if i_lo + 1 not in idx_to_slot or i_hi + 1 not in idx_to_slot:
            raise ConstructionFailure(
                f"tube image at step {k} needs orbit index "
                f"{max(i_lo, i_hi) + 1}, outside the fine window; "
                f"increase l or lower the tube level"
            )
        t_lo = idx_to_slot[i_lo + 1]
        t_hi = idx_to_slot[i_hi + 1]
        s_lo = (t_lo - 1) % n_fine
        s_hi = t_hi
        margin, count = check_step(k, s_lo, s_hi, zk)
        min_margin = min(min_margin, margin)
        slots.append((s_lo, s_hi))
        intervals.append(interval_of(s_lo, s_hi))
        counts.append(count)
    return TubeFamily(
        z0=z0, m_level=m_level, l=l, fine_level=fine_level,
        horizon=horizon, fine=fine, coarse=coarse,
        slots=tuple(slots), intervals=tuple(intervals),
        element_counts=tuple(counts), min_margin=float(min_margin),
    )


def tube_event_frequency(break_map, tubes, sigma, noise, n_replicas, seed,
                         k_const=None, threads=1):
    """Monte-Carlo frequencies of the tube event B and the smallness
    event D, each with a Wilson 99% confidence interval.

    B: the noisy orbit satisfies zbar_k in A_k for k = 1..horizon.
    D: k_const * sigma * max_i |xi_i| * lambda_hat(z_0, q_{m+1})^2 < 1/2,
    with k_const defaulting to sup |T''| and the max over the first
    q_{m+1} draws.  Also reported: the analytic lower bound for P(D)
    from the max-moment (Markov), the per-step escape rate for B, and a
    fitted constant for the per-step bound sigma^2 / theta_+^(2m+7).
    """
    if sigma < 0.0:
        raise ConfigError("noise level must be >= 0")
    if n_replicas < 1:
        raise ConfigError("need at least one replica")
    horizon = tubes.horizon
    q_m1 = horizon + 1
    if k_const is None:
        k_const = float(break_map.sup_second_deriv())
    hat = lambda_hat(break_map, tubes.z0, q_m1) if q_m1 >= 2 else 0.0
    xi = _noise_matrix(noise, seed, n_replicas, q_m1, threads=threads)

    alive = np.ones(n_replicas, dtype=bool)
    z = np.full(n_replicas, tubes.z0, dtype=float)
    step_fail = np.zeros(horizon, dtype=np.int64)
    for k in range(1, horizon + 1):
        z = wrap(break_map(z) + sigma * xi[:, k - 1])
        lo, hi = tubes.intervals[k]
        inside = ccw_dist(lo, z) < ccw_dist(lo, hi)
        newly_out = alive & ~inside
        step_fail[k - 1] = int(np.count_nonzero(newly_out))
        alive &= inside
    b_count = int(np.count_nonzero(alive))

    max_xi = np.max(np.abs(xi), axis=1)
    d_ok = k_const * sigma * max_xi * hat * hat < 0.5
    d_count = int(np.count_nonzero(d_ok))

    theta_plus, _ = break_map.theta_bounds()
    theta_plus = float(theta_plus)
    total_steps = n_replicas * horizon
    per_step = float(np.sum(step_fail)) / total_steps if total_steps else 0.0
    fitted_c = (per_step * theta_plus ** (2 * tubes.m_level + 7) / sigma ** 2
                if sigma > 0.0 else 0.0)
    markov = noise.max_abs_moment(noise.p, q_m1) * (
        2.0 * k_const * sigma * hat * hat
    ) ** noise.p
    return {
        "p_b": b_count / n_replicas,
        "ci_b": wilson_interval(b_count, n_replicas),
        "p_d": d_count / n_replicas,
        "ci_d": wilson_interval(d_count, n_replicas),
        "d_lower_bound": max(0.0, 1.0 - markov),
        "per_step_escape": per_step,
        "fitted_c": fitted_c,
        "theta_plus": theta_plus,
        "lambda_hat": hat,
        "k_const": k_const,
        "horizon": horizon,
        "n_replicas": n_replicas,
        "sigma": float(sigma),
    }


# -- exponents from the eigenvalue estimates ---------------------------------


@dataclass(frozen=True)
class NoiseExponents:
    """gamma / tau evaluated from the formulae, with interval arithmetic
    over the eigenvalue error bars.  ordering_ok records whether
    lambda_{-s}^2 <= lambda_{-2}^s held (then tau >= gamma)."""

    gamma: float
    tau: float
    gamma_range: tuple
    tau_range: tuple
    branch: str
    ordering_ok: bool
    feasible: bool


def _value_err(x):
    if hasattr(x, "value"):
        return float(x.value), float(getattr(x, "residual", 0.0) or 0.0)
    return float(x), 0.0


def noise_exponents(lambda_minus_1, theta_plus, rho, p,
                    lambda_minus_s=None, lambda_minus_2=None):
    """Evaluate the schedule exponents

        gamma = max(2/p - (5 ln l1 + 4 ln(1/th) + 6)/ln rho,
                    1/2 + 2 ln th / ln rho)
        tau   = gamma + (2 ln ls - s ln l2) / (3 ln rho),  s = min(p, 3)

    from eigenvalue estimates (floats or estimates with residual error
    bars; bars are propagated by corner evaluation).  The correction in
    tau is nonnegative exactly when lambda_{-s}^2 <= lambda_{-2}^s; a
    violated ordering is flagged, not hidden.  Note these are the
    asymptotic schedule exponents; for the break families they are
    large, so the n^(-tau) schedule reaches machine-negligible sigma
    within a few levels (reported, and the experiment schedules are
    calibrated empirically instead).
    """
    if not p > 2.0:
        raise ConfigError("moment order p must exceed 2")
    l1, e1 = _value_err(lambda_minus_1)
    th = float(theta_plus)
    rho = float(rho)
    if not (0.0 < rho < 1.0) or not (0.0 < th < 1.0) or l1 <= 0.0:
        raise ConfigError("estimates out of range (need rho, theta in (0,1))")
    ln_rho = math.log(rho)

    def gamma_of(l1v):
        a = 2.0 / p - (5.0 * math.log(l1v) + 4.0 * math.log(1.0 / th) + 6.0) / ln_rho
        b = 0.5 + 2.0 * math.log(th) / ln_rho
        return (a, "moment") if a >= b else (b, "tube")

    gamma, branch = gamma_of(l1)
    corners = [gamma_of(v)[0] for v in (l1 - e1, l1 + e1) if v > 0.0]
    g_lo, g_hi = min(corners + [gamma]), max(corners + [gamma])

    s = min(p, 3.0)
    if lambda_minus_s is None or lambda_minus_2 is None:
        return NoiseExponents(
            gamma=gamma, tau=gamma, gamma_range=(g_lo, g_hi),
            tau_range=(g_lo, g_hi), branch=branch,
            ordering_ok=True, feasible=gamma > 0.0,
        )
    ls, es = _value_err(lambda_minus_s)
    l2, e2 = _value_err(lambda_minus_2)

    def corr_of(lsv, l2v):
        return (2.0 * math.log(lsv) - s * math.log(l2v)) / (3.0 * ln_rho)

    corr = corr_of(ls, l2)
    c_corners = [
        corr_of(a, b)
        for a in (ls - es, ls + es) if a > 0.0
        for b in (l2 - e2, l2 + e2) if b > 0.0
    ]
    c_lo = min(c_corners + [corr])
    c_hi = max(c_corners + [corr])
    ordering_ok = ls ** 2 <= l2 ** s
    tau = gamma + corr
    return NoiseExponents(
        gamma=gamma, tau=tau, gamma_range=(g_lo, g_hi),
        tau_range=(g_lo + c_lo, g_hi + c_hi), branch=branch,
        ordering_ok=ordering_ok, feasible=gamma > 0.0 and tau >= gamma,
    )


# -- the normality experiment -------------------------------------------------


@dataclass(frozen=True, eq=False)
class CltReport:
    """Distributional diagnostics for omega at one level."""

    m: int
    n: int
    sigma: float
    n_replicas: int
    ks: float
    ks_pvalue: float
    ks_linear: float
    var_l_exact: float
    var_l_sample: float
    be_proxy: float
    fitted_be_const: float
    tube_freq: float | None
    tube_ci: tuple | None
    d_freq: float
    d_ci: tuple
    unwrap_left: int
    omega_sorted: np.ndarray = field(repr=False)

    def to_row(self):
        return {
            "m": self.m, "n": self.n, "sigma": self.sigma,
            "replicas": self.n_replicas, "ks": self.ks,
            "ks_pvalue": self.ks_pvalue, "ks_linear": self.ks_linear,
            "var_l_exact": self.var_l_exact,
            "var_l_sample": self.var_l_sample, "be_proxy": self.be_proxy,
            "fitted_be_const": self.fitted_be_const,
            "tube_freq": self.tube_freq, "d_freq": self.d_freq,
            "unwrap_left": self.unwrap_left,
        }


def _ks_against_normal(sample, exact_limit=100_000):
    n = len(sample)
    method = "exact" if n <= exact_limit else "asymp"
    res = stats.kstest(sample, "norm", method=method)
    return float(res.statistic), float(res.pvalue)


def resolve_sigma(schedule, m, q_m):
    """Schedule forms: float (flat), {m: sigma} dict, {"c1","tau"} power
    law sigma = c1 * q_m^(-tau), or a callable (m, q_m) -> sigma."""
    if callable(schedule):
        return float(schedule(m, q_m))
    if isinstance(schedule, dict):
        if "c1" in schedule:
            return float(schedule["c1"]) * float(q_m) ** -float(schedule["tau"])
        if m in schedule:
            return float(schedule[m])
        raise ConfigError(f"sigma schedule has no entry for level {m}")
    return float(schedule)


def clt_experiment(break_map, z0, m_range, sigma_schedule, noise,
                   n_replicas, seed, cf=None, tube_level=None, tube_l=6,
                   use_linear_pass=True, threads=1):
    """Monte-Carlo normality check of omega_n at n = q_m per level m.

    Per level: N replica orbits driven by common random numbers across
    levels (replica r always uses stream (seed, r), and level m uses the
    first q_m draws), omega = unwrap(zbar_n - z_n) / (sigma sqrt(var L))
    with var L = Var(xi) Lambda_2 exact, KS distance and p-value against
    the standard normal, the same for the linear-only proxy L_n /
    sqrt(var L), the moment ratio Lambda_s/(Lambda_2)^{s/2} at
    s = min(p, 3) (whose product with a stable constant should bound the
    linear KS), the D-event frequency, and, when tube_level is given, the
    tube-event frequency from the same draws.

    sigma = 0 is refused: omega is 0/0 there (use simulate for plain
    orbits).  Steps that leave the unwrap-safe region are counted per
    level and flagged once via UnwrapAmbiguityWarning.
    """
    levels = sorted(set(int(m) for m in m_range))
    if not levels:
        raise ConfigError("empty level range")
    if n_replicas < 8:
        raise ConfigError("need at least 8 replicas for a distribution test")

    # one continued-fraction measurement at the deepest level anything
    # below needs (the tube fine partition is usually the deepest)
    deep = levels[-1]
    if tube_level is not None:
        deep = max(deep, 2 * tube_level + tube_l + 1)
    probe = DynamicalPartition.build(break_map, deep, cf=cf)
    cf = probe.cf
    parts = {}
    for m in levels:
        parts[m] = probe if m == deep else DynamicalPartition.build(
            break_map, m, cf=cf)

    z0 = wrap(float(z0))
    tubes = None
    if tube_level is not None:
        tubes = build_tubes(break_map, z0, tube_level, l=tube_l, cf=cf)

    n_max = parts[levels[-1]].q[0]
    # draws must also cover the tube horizon q_{tube+1}-1, which can
    # exceed the deepest omega horizon
    n_draw = max(n_max, tubes.horizon if tubes is not None else 0)
    logs = log_deriv_orbit(break_map, z0, n_max)
    det = np.asarray(break_map.orbit(z0, n_max), dtype=float)
    xi_all = _noise_matrix(noise, seed, n_replicas, n_draw, threads=threads)
    var_xi = noise.variance()
    s_mom = min(noise.p, 3.0)

    reports = []
    for m in levels:
        q_m = parts[m].q[0]
        sigma = resolve_sigma(sigma_schedule, m, q_m)
        if not sigma > 0.0:
            raise ConfigError(
                f"sigma must be positive at level {m} (omega is 0/0 at "
                f"sigma = 0)"
            )
        xi = xi_all[:, :q_m]
        paths = _batch_paths(break_map, z0, xi, sigma)
        gaps = signed_gap(det[q_m], paths[:, q_m])
        left = int(np.count_nonzero(np.abs(gaps) > 0.25))
        if left:
            warnings.warn(
                f"level {m}: {left} of {n_replicas} replicas drifted past "
                f"1/4 at the final step; their omega values are "
                f"unwrap-ambiguous", UnwrapAmbiguityWarning, stacklevel=2,
            )
        var_l = var_xi * math.exp(log_lambda_s(break_map, z0, q_m, 2.0,
                                               logs=logs))
        omega = gaps / (sigma * math.sqrt(var_l))
        ks, pval = _ks_against_normal(omega)

        w = linear_weights(break_map, z0, q_m, logs=logs)
        l_vals = xi @ w
        var_l_sample = float(np.var(l_vals, ddof=1))
        if use_linear_pass:
            ks_lin, _ = _ks_against_normal(l_vals / math.sqrt(var_l))
        else:
            ks_lin = math.nan

        ln_s = log_lambda_s(break_map, z0, q_m, s_mom, logs=logs)
        ln_2 = log_lambda_s(break_map, z0, q_m, 2.0, logs=logs)
        be_proxy = math.exp(ln_s - 0.5 * s_mom * ln_2)
        fitted_be = ks_lin / be_proxy if be_proxy > 0 else math.nan

        hat = lambda_hat(break_map, z0, q_m, logs=logs)
        k_const = float(break_map.sup_second_deriv())
        max_xi = np.max(np.abs(xi), axis=1)
        d_ok = k_const * sigma * max_xi * hat * hat < 0.5
        d_count = int(np.count_nonzero(d_ok))

        tube_freq = None
        tube_ci = None
        if tubes is not None:
            # the tube event runs over the tube's own horizon q_{t+1}-1,
            # which is at least the omega horizon when t >= m - 1
            alive = np.ones(n_replicas, dtype=bool)
            z = np.full(n_replicas, z0, dtype=float)
            for k in range(1, tubes.horizon + 1):
                z = wrap(break_map(z) + sigma * xi_all[:, k - 1])
                lo, hi = tubes.intervals[k]
                alive &= ccw_dist(lo, z) < ccw_dist(lo, hi)
            b_count = int(np.count_nonzero(alive))
            tube_freq = b_count / n_replicas
            tube_ci = wilson_interval(b_count, n_replicas)

        reports.append(CltReport(
            m=m, n=q_m, sigma=float(sigma), n_replicas=n_replicas,
            ks=ks, ks_pvalue=pval, ks_linear=ks_lin,
            var_l_exact=var_l, var_l_sample=var_l_sample,
            be_proxy=be_proxy, fitted_be_const=fitted_be,
            tube_freq=tube_freq, tube_ci=tube_ci,
            d_freq=d_count / n_replicas,
            d_ci=wilson_interval(d_count, n_replicas),
            unwrap_left=left,
            omega_sorted=np.sort(omega),
        ))
    return reports


def linear_clt_trend(break_map, z0, m_range, noise, n_replicas, seed,
                     cf=None, threads=1):
    """Normality of the linear term alone, across levels, with common
    random numbers.

    Per level m: L at horizon q_m from the suffix-product weights and the
    shared replica draws (level m uses the first q_m draws of each
    replica stream), normalized by the exact sqrt(Var(xi) Lambda_2), KS
    against the standard normal, and the moment ratio
    Lambda_s / Lambda_2^{s/2} at s = min(p, 3) whose decay drives the
    Berry-Esseen side.  No orbits are simulated and no sigma enters: L
    is linear in the draws.  Returns rows sorted by level.
    """
    levels = sorted(set(int(m) for m in m_range))
    if not levels:
        raise ConfigError("empty level range")
    if n_replicas < 8:
        raise ConfigError("need at least 8 replicas for a distribution test")
    probe = DynamicalPartition.build(break_map, levels[-1], cf=cf)
    cf = probe.cf
    q_of = {m: (probe.q[0] if m == levels[-1]
                else DynamicalPartition.build(break_map, m, cf=cf).q[0])
            for m in levels}
    z0 = wrap(float(z0))
    n_max = q_of[levels[-1]]
    logs = log_deriv_orbit(break_map, z0, n_max)
    xi = _noise_matrix(noise, seed, n_replicas, n_max, threads=threads)
    var_xi = noise.variance()
    s_mom = min(noise.p, 3.0)
    rows = []
    for m in levels:
        n = q_of[m]
        w = linear_weights(break_map, z0, n, logs=logs)
        var_l = var_xi * float(w @ w)
        sample = (xi[:, :n] @ w) / math.sqrt(var_l)
        ks, pval = _ks_against_normal(sample)
        ln_s = log_lambda_s(break_map, z0, n, s_mom, logs=logs)
        ln_2 = log_lambda_s(break_map, z0, n, 2.0, logs=logs)
        rows.append({
            "m": m, "n": n, "ks": ks, "ks_pvalue": pval,
            "be_proxy": math.exp(ln_s - 0.5 * s_mom * ln_2),
            "var_l": var_l,
        })
    return rows


def calibrate_sigma(break_map, tubes, noise, target=0.99, n_replicas=400,
                    seed=7, sigma_hi=None):
    """Largest power-of-two sigma whose empirical tube frequency reaches
    `target`.  A coarse, deterministic calibration: start from a quarter
    of the smallest tube length over the noise support bound and halve
    until the point estimate clears the target.  Returns (sigma, report);
    the report carries the Wilson interval.  Note the interval's lower
    end cannot certify a target t with fewer than about z^2 t/(1-t)
    replicas (roughly 660 for t = 0.99) even at zero observed escapes,
    which is why the decision here uses the point estimate."""
    if sigma_hi is None:
        min_len = float(np.min(tubes.lengths()))
        sigma_hi = 0.25 * min_len / noise.support_bound
    sigma = sigma_hi
    for _ in range(60):
        rep = tube_event_frequency(break_map, tubes, sigma, noise,
                                   n_replicas, seed)
        if rep["p_b"] >= target:
            return sigma, rep
        sigma *= 0.5
    raise ConstructionFailure(
        f"no sigma above {sigma} reached tube frequency {target}"
    )
