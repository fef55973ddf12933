"""Circle maps with break points.

Families
--------
RigidRotation          x -> x + rho, no break.
ExpBreakMap            derivative proportional to e^{kappa x} on one full
                       branch; the derivative jumps only at the wrap point 0,
                       with jump ratio e^{kappa/2}. `offset` tunes the
                       rotation number through the whole unit interval.
PiecewiseMobiusCircleMap
                       finitely many fractional-linear branches on [0, 1);
                       covers the commuting-pair circle maps and every
                       normalized return map of one (compositions of Mobius
                       branches are again Mobius, so return maps stay exact).

The commuting-pair construction (build_fractional_linear_pair /
circle_from_pair) produces the piecewise fractional-linear circle
homeomorphism with golden-mean rotation number and two derivative breaks:
one at x_b = 1/(1 + alpha), one at its image 0.

All families support an extended-precision mode: with_precision(dps) returns
the same map with mpmath coefficients carrying `dps` significant digits, and
every method then accepts/returns mpf values. Scalar branch lookup uses
bisect so it works identically for floats and mpf.
"""

import bisect
import contextlib
import json
import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import ConfigError, DomainViolation, NotABreakPoint, RootNotBracketed
from .mobius import Mobius, affine, compose_chain
from .numerics import bisect_root, ccw_dist, wrap


class CirclePoint(float):
    """A float wrapped into [0, 1). Behaves as a plain float in arithmetic."""

    def __new__(cls, value):
        return super().__new__(cls, wrap(float(value)))


@dataclass(frozen=True)
class ArcInterval:
    """Half-open counterclockwise arc [left, right) on the circle.

    Fields may be floats or mpf; length is the counterclockwise distance,
    so an arc spanning the wrap point works the same as any other.
    """

    left: float
    right: float

    @property
    def length(self):
        return ccw_dist(self.left, self.right)

    def contains(self, x):
        return ccw_dist(self.left, x) < self.length

    def midpoint(self):
        return wrap(self.left + self.length / 2)


class BreakMap:
    """Base class: an orientation-preserving circle homeomorphism, smooth on
    each branch, with finitely many derivative break points.

    Subclasses provide `boundaries` (sorted branch cut points starting at 0),
    scalar branch evaluation and the family config dict. Derivatives are
    one-sided everywhere; at a non-break point both sides agree.
    """

    dps = None  # None -> double precision; int -> mpmath working digits

    # -- subclass surface -------------------------------------------------
    @property
    def boundaries(self):
        raise NotImplementedError

    def _branch_call(self, j, x):
        raise NotImplementedError

    def _branch_deriv(self, j, x):
        raise NotImplementedError

    def _branch_second_deriv(self, j, x):
        raise NotImplementedError

    def _branch_inverse(self, j, y):
        """Preimages of y under branch j as an iterable of candidates."""
        raise NotImplementedError

    def to_config(self):
        raise NotImplementedError

    # -- shared machinery --------------------------------------------------
    def _one(self):
        return mpmath.mpf(1) if self.dps else 1.0

    def workdps(self):
        """Context manager pinning mpmath working precision to this map's dps.

        mpmath arithmetic precision is set by the global context at operation
        time, so every mp-mode computation must run inside this guard. A
        no-op in double mode.
        """
        return mpmath.workdps(self.dps) if self.dps else contextlib.nullcontext()

    def branch_index(self, x):
        b = self.boundaries
        return bisect.bisect_right(b, x) - 1

    def __call__(self, x):
        if isinstance(x, np.ndarray):
            return self._call_array(x)
        with self.workdps():
            return wrap(self._branch_call(self.branch_index(x), x))

    def _call_array(self, x):
        raise NotImplementedError("this family has no vectorized path")

    def deriv(self, x, side="+"):
        """One-sided derivative. side '+' (default, matches the half-open
        branch convention) or '-'. Arrays use the '+' convention."""
        if isinstance(x, np.ndarray):
            return self._deriv_array(x)
        with self.workdps():
            j = self.branch_index(x)
            if side == "+":
                return self._branch_deriv(j, x)
            b = self.boundaries
            if x == b[j]:  # left limit comes from the previous branch
                if j == 0:
                    return self._branch_deriv(len(b) - 1, x + self._one())
                return self._branch_deriv(j - 1, x)
            return self._branch_deriv(j, x)

    def _deriv_array(self, x):
        raise NotImplementedError("this family has no vectorized path")

    def second_deriv(self, x, side="+"):
        with self.workdps():
            j = self.branch_index(x)
            if side != "+":
                b = self.boundaries
                if x == b[j]:
                    if j == 0:
                        return self._branch_second_deriv(len(b) - 1, x + self._one())
                    return self._branch_second_deriv(j - 1, x)
            return self._branch_second_deriv(j, x)

    def inverse_point(self, y):
        """The unique preimage of y in [0, 1)."""
        with self.workdps():
            y = wrap(y)
            b = self.boundaries
            one = self._one()
            for j in range(len(b)):
                left = b[j]
                right = b[j + 1] if j + 1 < len(b) else one
                for cand in self._branch_inverse(j, y):
                    if left <= cand < right:
                        return cand
                # branch image may sit across the wrap point
                for shift in (-one, one):
                    for cand in self._branch_inverse(j, y + shift):
                        if left <= cand < right:
                            return cand
        raise ValueError(f"no preimage found for {y}")

    def iterate(self, x, n):
        for _ in range(n):
            x = self(x)
        return x

    def orbit(self, x, n):
        """[x, T x, ..., T^n x]; numpy array in double mode, list in mp mode."""
        pts = [x]
        for _ in range(n):
            pts.append(self(pts[-1]))
        if self.dps:
            return pts
        return np.array(pts, dtype=float)

    def backward_orbit(self, x, n):
        """[x, T^-1 x, ..., T^-n x]."""
        pts = [x]
        for _ in range(n):
            pts.append(self.inverse_point(pts[-1]))
        if self.dps:
            return pts
        return np.array(pts, dtype=float)

    # -- break structure ---------------------------------------------------
    def break_points(self, rel_tol=1e-9):
        """Boundary points where the one-sided derivatives genuinely differ."""
        out = []
        for b in self.boundaries:
            dm = self.deriv(b, side="-")
            dp = self.deriv(b, side="+")
            if abs(dm - dp) > rel_tol * max(abs(dm), abs(dp)):
                out.append(b)
        return tuple(out)

    def jump_ratio(self, point, rel_tol=1e-9):
        """sqrt(T'(point-)/T'(point+)); NotABreakPoint if the sides agree."""
        dm = self.deriv(point, side="-")
        dp = self.deriv(point, side="+")
        if abs(dm - dp) <= rel_tol * max(abs(dm), abs(dp)):
            raise NotABreakPoint(f"one-sided derivatives agree at {point}")
        root = mpmath.sqrt if self.dps else math.sqrt
        return root(dm / dp)

    def derivative_bounds(self):
        """(min, max) of T' over the circle. Every family here has a
        monotone derivative on each branch, so endpoint values suffice."""
        with self.workdps():
            lo = None
            hi = None
            one = self._one()
            b = self.boundaries
            for j in range(len(b)):
                left = b[j]
                right = b[j + 1] if j + 1 < len(b) else one
                for v in (self._branch_deriv(j, left), self._branch_deriv(j, right)):
                    lo = v if lo is None or v < lo else lo
                    hi = v if hi is None or v > hi else hi
            return lo, hi

    def sup_second_deriv(self):
        """max |T''| over branch closures (endpoint evaluations; |T''| is
        monotone along each branch for all families here)."""
        with self.workdps():
            out = 0
            one = self._one()
            b = self.boundaries
            for j in range(len(b)):
                left = b[j]
                right = b[j + 1] if j + 1 < len(b) else one
                for v in (
                    self._branch_second_deriv(j, left),
                    self._branch_second_deriv(j, right),
                ):
                    out = max(out, abs(v))
            return out

    def log_deriv_total_variation(self):
        """(v_bar, v): branch-wise variation of ln T', and the total including
        2|ln c_b| per break point b. Exact for monotone branch derivatives."""
        with self.workdps():
            log = mpmath.log if self.dps else math.log
            one = self._one()
            b = self.boundaries
            v_bar = 0
            for j in range(len(b)):
                left = b[j]
                right = b[j + 1] if j + 1 < len(b) else one
                v_bar += abs(log(self._branch_deriv(j, right)) - log(self._branch_deriv(j, left)))
            v = v_bar
            for p in self.break_points():
                v += 2 * abs(log(self.jump_ratio(p)))
            return v_bar, v

    def theta_bounds(self):
        """(theta_plus, theta_minus) = (1+e^{v})^{-1/2}, (1+e^{-v})^{-1/2}."""
        _, v = self.log_deriv_total_variation()
        with self.workdps():
            if self.dps:
                return 1 / mpmath.sqrt(1 + mpmath.e**v), 1 / mpmath.sqrt(1 + mpmath.e**-v)
            return 1.0 / math.sqrt(1.0 + math.exp(v)), 1.0 / math.sqrt(1.0 + math.exp(-v))

    def to_json(self):
        return json.dumps(self.to_config(), sort_keys=True)


class RigidRotation(BreakMap):
    """x -> x + rho mod 1. No break points; the reference integrable case."""

    def __init__(self, rho, dps=None):
        self.dps = dps
        self.rho = mpmath.mpf(rho) if dps else float(rho)
        self._boundaries = [mpmath.mpf(0) if dps else 0.0]

    @property
    def boundaries(self):
        return self._boundaries

    def _branch_call(self, j, x):
        return x + self.rho

    def _branch_deriv(self, j, x):
        return self._one()

    def _branch_second_deriv(self, j, x):
        return 0 * self._one()

    def _branch_inverse(self, j, y):
        return (wrap(y - self.rho),)

    def _call_array(self, x):
        return wrap(x + float(self.rho))

    def _deriv_array(self, x):
        return np.ones_like(x)

    def with_offset(self, rho):
        return RigidRotation(rho, dps=self.dps)

    def with_precision(self, dps):
        # mpf(float) converts the binary value exactly: same map, more digits.
        return RigidRotation(self.rho, dps=dps)

    def to_config(self):
        cfg = {"schema_version": 1, "family": "rotation", "rho": float(self.rho)}
        if self.dps:
            cfg["dps"] = self.dps
        return cfg


class ExpBreakMap(BreakMap):
    """One smooth branch with T'(x) = d * e^{kappa x}, d = kappa/(e^kappa - 1).

    T(x) = offset + d*(e^{kappa x} - 1)/kappa mod 1. The total branch rise is
    exactly 1, so the only derivative discontinuity is at the wrap point 0,
    with jump ratio sqrt(T'(0-)/T'(0+)) = e^{kappa/2}. The log-derivative is
    linear in x, so its branch variation is exactly |kappa| and the total
    variation including the jump is 2|kappa|.
    """

    def __init__(self, kappa, offset, dps=None):
        if float(kappa) == 0.0:
            raise ConfigError("kappa must be nonzero (use RigidRotation for zero)")
        self.dps = dps
        if dps:
            with mpmath.workdps(dps):
                self.kappa = mpmath.mpf(kappa)
                self.offset = mpmath.mpf(offset)
                self.d = self.kappa / mpmath.expm1(self.kappa)
        else:
            self.kappa = float(kappa)
            self.offset = wrap(float(offset))
            self.d = self.kappa / math.expm1(self.kappa)
        self._boundaries = [mpmath.mpf(0) if dps else 0.0]

    @property
    def boundaries(self):
        return self._boundaries

    def _expm1(self, t):
        return mpmath.expm1(t) if self.dps else math.expm1(t)

    def _exp(self, t):
        return mpmath.exp(t) if self.dps else math.exp(t)

    def _branch_call(self, j, x):
        return self.offset + self.d * self._expm1(self.kappa * x) / self.kappa

    def _branch_deriv(self, j, x):
        return self.d * self._exp(self.kappa * x)

    def _branch_second_deriv(self, j, x):
        return self.kappa * self.d * self._exp(self.kappa * x)

    def _branch_inverse(self, j, y):
        t = (wrap(y) - self.offset) % 1
        arg = self.kappa * t / self.d
        # x = log(1 + arg)/kappa lies in [0, 1) by construction
        if self.dps:
            return (mpmath.log1p(arg) / self.kappa,)
        return (math.log1p(arg) / self.kappa,)

    def delta_apply(self, x, h):
        """Exact T(x+h) - T(x) (no wrap): d*e^{kappa x}*(expm1(kappa h)/kappa)."""
        if isinstance(h, np.ndarray):
            scale = self.d * np.exp(self.kappa * np.asarray(x, dtype=float)) / self.kappa
            return scale * np.expm1(self.kappa * h)
        return self.d * self._exp(self.kappa * x) * self._expm1(self.kappa * h) / self.kappa

    def _call_array(self, x):
        return wrap(self.offset + self.d * np.expm1(self.kappa * x) / self.kappa)

    def _deriv_array(self, x):
        return self.d * np.exp(self.kappa * x)

    def with_offset(self, offset):
        return ExpBreakMap(self.kappa, offset, dps=self.dps)

    def with_precision(self, dps):
        return ExpBreakMap(float(self.kappa), float(self.offset), dps=dps)

    def to_config(self):
        cfg = {
            "schema_version": 1,
            "family": "exp_break",
            "kappa": float(self.kappa),
            "offset": float(self.offset),
        }
        if self.dps:
            cfg["dps"] = self.dps
        return cfg


class PiecewiseMobiusCircleMap(BreakMap):
    """Circle homeomorphism with fractional-linear branches.

    boundaries[0] must be 0; branch j acts on [boundaries[j], boundaries[j+1])
    (the last branch runs to 1). Branch values are wrapped into [0, 1).
    """

    def __init__(self, boundaries, branches, dps=None, config=None):
        if float(boundaries[0]) != 0.0:
            raise ConfigError("first branch boundary must be 0")
        self.dps = dps
        self._boundaries = list(boundaries)
        self.branches = list(branches)
        self._config = config
        if not dps:
            self._b_arr = np.array([float(b) for b in boundaries], dtype=float)
            self._coef = np.array(
                [[m.a, m.b, m.c, m.e] for m in self.branches], dtype=float
            )

    @property
    def boundaries(self):
        return self._boundaries

    def _branch_call(self, j, x):
        return self.branches[j](x)

    def _branch_deriv(self, j, x):
        return self.branches[j].deriv(x)

    def _branch_second_deriv(self, j, x):
        return self.branches[j].second_deriv(x)

    def _branch_inverse(self, j, y):
        return (self.branches[j].inverse()(y),)

    def delta_apply(self, x, h, j=None):
        """Exact T(x+h) - T(x) within branch j (default: branch of x)."""
        if j is None:
            j = self.branch_index(x)
        return self.branches[j].delta_apply(x, h)

    def _branch_index_array(self, x):
        return np.clip(np.searchsorted(self._b_arr, x, side="right") - 1, 0, len(self.branches) - 1)

    def _call_array(self, x):
        j = self._branch_index_array(x)
        a, b, c, e = (self._coef[j, i] for i in range(4))
        return wrap((a * x + b) / (c * x + e))

    def _deriv_array(self, x):
        j = self._branch_index_array(x)
        a, b, c, e = (self._coef[j, i] for i in range(4))
        den = c * x + e
        return (a * e - b * c) / (den * den)

    def with_precision(self, dps):
        cfg = self._config
        if cfg and cfg.get("family") == "pair_circle":
            pair = build_fractional_linear_pair(cfg["c"], dps=dps)
            return circle_from_pair(pair, cfg["which"])
        conv = mpmath.mpf if dps else float  # mpf(float) is the exact binary value
        bnds = [conv(b) for b in self._boundaries]
        brs = [m.map_coeffs(conv) for m in self.branches]
        return PiecewiseMobiusCircleMap(bnds, brs, dps=dps, config=cfg)

    def to_config(self):
        if self._config is not None:
            cfg = dict(self._config)
            cfg.setdefault("schema_version", 1)
            if self.dps:
                cfg["dps"] = self.dps
            return cfg
        cfg = {
            "schema_version": 1,
            "family": "piecewise_mobius",
            "boundaries": [float(b) for b in self._boundaries],
            "coeffs": [[float(m.a), float(m.b), float(m.c), float(m.e)] for m in self.branches],
        }
        if self.dps:
            cfg["dps"] = self.dps
        return cfg


# ---------------------------------------------------------------------------
# Commuting fractional-linear pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FractionalLinearPair:
    """The renormalization-period-2 pair family at jump parameter c.

    Pair i (i = 1, 2) is (f_i on [-1, 0], g_i on [0, alpha_i]) with
    f_i(0) = alpha_i, g_i(0) = -1, f_i(-1) = g_i(alpha_i) = -beta0,
    c_1 = c, c_2 = 1/c, and beta0 the unique root in (0, 1) of

        b^4 - b^3 - b^2 (c+1)^2/c - b + 1 = 0.

    Renormalizing pair 1 yields pair 2 exactly, and vice versa.
    """

    c: float
    beta0: float
    alpha1: float
    alpha2: float
    f1: Mobius
    g1: Mobius
    f2: Mobius
    g2: Mobius
    dps: int = None

    def pair(self, which):
        if which == 1:
            return self.f1, self.g1, self.alpha1
        if which == 2:
            return self.f2, self.g2, self.alpha2
        raise ConfigError("which must be 1 or 2")


def _pair_member(c_i, beta0):
    alpha = (c_i - beta0 * beta0) / (1 + beta0)
    f = Mobius(c_i * beta0, alpha * beta0, beta0 + alpha - c_i, beta0)
    g = Mobius(alpha * beta0, -alpha * beta0 * c_i, c_i - alpha - c_i * beta0, alpha * beta0 * c_i)
    return alpha, f, g


def build_fractional_linear_pair(c, dps=None):
    """Construct the pair family at parameter c > 0, c != 1.

    Raises RootNotBracketed if the defining quartic has no sign change on
    (0, 1) and DomainViolation if the boundary identities fail validation.
    """
    if dps:
        with mpmath.workdps(dps):
            return _build_pair_impl(mpmath.mpf(c), dps)
    return _build_pair_impl(float(c), None)


def _build_pair_impl(c, dps):
    if c <= 0:
        raise ConfigError("c must be positive")
    if c == 1:
        raise ConfigError("c = 1 has no break; use RigidRotation")
    k = (c + 1) ** 2 / c
    quartic = lambda b: b**4 - b**3 - k * b**2 - b + 1
    tiny = mpmath.mpf("1e-40") if dps else 1e-15
    one = mpmath.mpf(1) if dps else 1.0
    if quartic(tiny) <= 0 or quartic(one - tiny) >= 0:
        raise RootNotBracketed("defining quartic has no root bracket in (0, 1)")
    iters = (dps or 17) * 4 + 40
    beta0 = bisect_root(quartic, tiny, one - tiny, iterations=iters)

    alpha1, f1, g1 = _pair_member(c, beta0)
    alpha2, f2, g2 = _pair_member(1 / c, beta0)
    pair = FractionalLinearPair(c, beta0, alpha1, alpha2, f1, g1, f2, g2, dps)
    tol = mpmath.mpf(10) ** (10 - dps) if dps else 1e-12
    _validate_pair(pair, tol)
    return pair


def _validate_pair(pair, tol):
    for which in (1, 2):
        f, g, alpha = pair.pair(which)
        checks = [
            ("f(0) = alpha", f(0) - alpha),
            ("g(0) = -1", g(0) + 1),
            ("f(-1) = -beta0", f(-1) + pair.beta0),
            ("g(alpha) = -beta0", g(alpha) + pair.beta0),
        ]
        for name, resid in checks:
            if abs(resid) > tol:
                raise DomainViolation(
                    f"pair {which}: identity {name} fails by {float(abs(resid)):.3e}"
                )
        if f.deriv(0) == g.deriv(0):
            raise DomainViolation(f"pair {which}: no derivative break at 0")


def circle_from_pair(pair, which=1):
    """Glue pair `which` into a circle homeomorphism via l(x) = (x+1)/(1+alpha).

    Branches: [0, x_b) carries l o f o l^{-1}, [x_b, 1) carries l o g o l^{-1},
    with x_b = 1/(1 + alpha). Breaks sit at x_b and at its image 0; the
    derivative values of the circle map equal those of (f, g) pointwise
    because l is affine.
    """
    guard = mpmath.workdps(pair.dps) if pair.dps else contextlib.nullcontext()
    with guard:
        f, g, alpha = pair.pair(which)
        one = mpmath.mpf(1) if pair.dps else 1.0
        lmap = affine(one / (1 + alpha), one / (1 + alpha))
        linv = affine(one + alpha, -one)
        fb = compose_chain([linv, f, lmap])
        gb = compose_chain([linv, g, lmap])
        xb = one / (1 + alpha)
        zero = 0 * one
    cfg = {"schema_version": 1, "family": "pair_circle", "c": float(pair.c), "which": which}
    return PiecewiseMobiusCircleMap([zero, xb], [fb, gb], dps=pair.dps, config=cfg)


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

def map_from_config(cfg):
    """Build a BreakMap from its config dict (inverse of to_config)."""
    if not isinstance(cfg, dict) or "family" not in cfg:
        raise ConfigError("map config must be a dict with a 'family' key")
    fam = cfg["family"]
    dps = cfg.get("dps")
    try:
        if fam == "rotation":
            return RigidRotation(cfg["rho"], dps=dps)
        if fam == "exp_break":
            return ExpBreakMap(cfg["kappa"], cfg["offset"], dps=dps)
        if fam == "pair_circle":
            pair = build_fractional_linear_pair(cfg["c"], dps=dps)
            return circle_from_pair(pair, cfg.get("which", 1))
        if fam == "piecewise_mobius":
            conv = mpmath.mpf if dps else float
            branches = [Mobius(*[conv(v) for v in row]) for row in cfg["coeffs"]]
            bnds = [conv(b) for b in cfg["boundaries"]]
            return PiecewiseMobiusCircleMap(bnds, branches, dps=dps)
    except KeyError as exc:
        raise ConfigError(f"map config for family '{fam}' is missing {exc}") from exc
    raise ConfigError(f"unknown map family '{fam}'")


def map_from_json(text):
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid map JSON: {exc}") from exc
    return map_from_config(cfg)
