"""Rotation numbers, continued fractions, and closest-return detection.

The rotation number is measured by watching the orbit of a base point and
recording the times at which a new point lands strictly inside one of the two
arcs between the base point and its current nearest orbit neighbors. That
containment test compares distances only along one side, so it is a circular
ORDER statement, invariant under any orientation-preserving change of
coordinates: the event times and sides of a circle homeomorphism are
identical to those of the rigid rotation with the same rotation number.

The neighbor pair evolves by Farey mediants: if the current neighbors are the
orbit points with (winding, time) data (p_a, q_a) and (p_b, q_b), the next
event happens at time q_a + q_b and carries winding p_a + p_b. This gives
three exact integer invariants that are checked at every event (index sum,
unit determinant, side alternation structure), the partial quotients as
side-run lengths, and a proven error bound: the rotation number lies strictly
between the two neighbor fractions, an interval of exact width
1/(q_a * q_b).

No float is ever rounded to an integer anywhere in the detection.
"""

import math
from dataclasses import dataclass, field

from .errors import BracketFailure, ConfigError, DepthUnreliable, ToleranceNotReached
from .numerics import ccw_dist


@dataclass(frozen=True)
class ContinuedFraction:
    """Partial quotients k_1..k_m with convergents p_n/q_n (q_0 = 1, p_0 = 0)."""

    quotients: tuple

    def __post_init__(self):
        if any((not isinstance(k, int)) or k < 1 for k in self.quotients):
            raise ConfigError("partial quotients must be integers >= 1")

    @property
    def p(self):
        out = [0]
        prev, cur = 1, 0  # p_{-1}, p_0
        for k in self.quotients:
            prev, cur = cur, k * cur + prev
            out.append(cur)
        return out

    @property
    def q(self):
        out = [1]
        prev, cur = 0, 1  # q_{-1}, q_0
        for k in self.quotients:
            prev, cur = cur, k * cur + prev
            out.append(cur)
        return out

    def convergents(self):
        return list(zip(self.p, self.q))

    def value(self):
        p, q = self.p[-1], self.q[-1]
        return p / q

    def denominators(self, count=None):
        """Return times q_1, q_2, ... (q_0 = 1 omitted)."""
        qs = self.q[1:]
        return qs if count is None else qs[:count]


def continued_fraction(rho, depth, floor_factor=1e3):
    """Partial quotients of a float rho in (0, 1) by the Gauss map.

    Raises DepthUnreliable (carrying the reliable prefix in .partial) when the
    remainder falls below floor_factor * eps * q_n before `depth` quotients
    are extracted: past that point the float no longer determines the
    expansion.
    """
    if not 0 < rho < 1:
        raise ConfigError("continued_fraction expects rho strictly inside (0, 1)")
    eps = math.ulp(1.0)
    ks = []
    x = rho
    q_prev, q_cur = 0, 1
    for _ in range(depth):
        if x < floor_factor * eps * q_cur:
            raise DepthUnreliable(
                f"remainder {x:.3e} below precision floor at depth {len(ks)}",
                partial=ks,
            )
        k = math.floor(1.0 / x)
        x = 1.0 / x - k
        ks.append(k)
        q_prev, q_cur = q_cur, k * q_cur + q_prev
    return ContinuedFraction(tuple(ks))


def quotients_from_events(sides):
    """Partial quotients from the side sequence of closest-return events.

    `sides` lists, for each event after the first, which neighbor was
    replaced ("L" or "R"). Runs of equal sides are the additive steps of the
    continued fraction; the trailing run is incomplete (a run is only closed
    by the next side switch) and is dropped.
    """
    if not sides:
        return ()
    runs = []
    cur, count = sides[0], 0
    for s in sides:
        if s == cur:
            count += 1
        else:
            runs.append((cur, count))
            cur, count = s, 1
    completed = runs  # trailing run (cur, count) never appended: not closed
    if not completed:
        return ()
    ks = []
    first_side, first_len = completed[0]
    if first_side == "R":
        # first event landed between the midpoint image and the base point
        # on the forward side: rotation number above 1/2, leading quotient 1
        ks.append(1)
        ks.append(first_len)
    else:
        ks.append(first_len + 1)
    for _, r in completed[1:]:
        ks.append(r)
    return tuple(ks)


@dataclass
class RotationEstimate:
    value: float
    error: float
    quotients: tuple = ()
    events: list = field(default_factory=list)  # [(time, side), ...]
    iterations: int = 0
    exact: bool = False

    def continued_fraction(self):
        return ContinuedFraction(self.quotients)

    def rows(self):
        """Per-convergent rows (n, k_n, p_n, q_n, p_n/q_n, error_bound)."""
        cf = self.continued_fraction()
        ps, qs = cf.p, cf.q
        out = []
        for n in range(1, len(qs)):
            err = 1.0 / (qs[n] * qs[n + 1]) if n + 1 < len(qs) else self.error
            out.append((n, cf.quotients[n - 1], ps[n], qs[n], ps[n] / qs[n], err))
        return out


def _closest_return_scan(break_map, x0, max_iter, tol=None, depth=None):
    """Core detector. Stops when the error bound reaches tol, when `depth`
    partial quotients are confirmed, or at max_iter. Returns a
    RotationEstimate regardless; callers decide whether it is good enough."""
    x0 = float(x0)
    x = x0
    # neighbor state: (winding p, time q, gap to x0 along that side)
    left = None
    right = None
    sides = []
    events = []
    n_done = 0
    confirmed = ()
    tiny_streak = 0
    for n in range(1, max_iter + 1):
        n_done = n
        x_prev = x
        x = break_map(x)
        step = ccw_dist(x_prev, x)
        if step < 1e-15:
            tiny_streak += 1
            if step == 0.0 or tiny_streak >= 64:
                # orbit contracted onto a fixed point of the float map:
                # rotation number 0 (the ccw-lift mediant would drift to 1-)
                return RotationEstimate(
                    value=0.0, error=0.0, quotients=(), events=events,
                    iterations=n, exact=True,
                )
        else:
            tiny_streak = 0
        d_ccw = ccw_dist(x0, x)
        if d_ccw == 0.0:
            # exact return: rotation number is rational and fully resolved
            if left is None:
                p_exact, q_exact = 0, 1  # fixed point at the base point
            else:
                p_exact, q_exact = left[0] + right[0], left[1] + right[1]
                if q_exact != n:
                    raise DepthUnreliable(
                        f"exact return at {n} but neighbor times sum to {q_exact}",
                        partial=list(confirmed),
                    )
            g = math.gcd(p_exact, q_exact)
            return RotationEstimate(
                value=(p_exact // g) / (q_exact // g),
                error=0.0,
                quotients=confirmed,
                events=events,
                iterations=n,
                exact=True,
            )
        d_cw = 1.0 - d_ccw
        if left is None:
            # first orbit point is both neighbors: windings 0 (ccw role)
            # and 1 (cw role) of the same point
            right = (0, 1, d_ccw)
            left = (1, 1, d_cw)
            events.append((1, "*"))
            continue
        if d_ccw < right[2]:
            side = "R"
            repl, other = right, left
        elif d_cw < left[2]:
            side = "L"
            repl, other = left, right
        else:
            continue
        q_new = left[1] + right[1]
        if q_new != n:
            raise DepthUnreliable(
                f"closest return at time {n}, but mediant structure predicts "
                f"{q_new}: orbit order corrupted (precision floor?)",
                partial=list(confirmed),
            )
        p_new = left[0] + right[0]
        gap = d_ccw if side == "R" else d_cw
        if side == "R":
            right = (p_new, q_new, gap)
        else:
            left = (p_new, q_new, gap)
        sides.append(side)
        events.append((n, side))
        confirmed = quotients_from_events(sides)
        err = 1.0 / (left[1] * right[1])
        if tol is not None and err <= tol:
            break
        if depth is not None and len(confirmed) >= depth:
            break
    if left is None:
        raise ToleranceNotReached("no orbit points generated", best=None, error=1.0)
    p_med = left[0] + right[0]
    q_med = left[1] + right[1]
    err = 1.0 / (left[1] * right[1])
    return RotationEstimate(
        value=p_med / q_med,
        error=err,
        quotients=confirmed,
        events=events,
        iterations=n_done,
    )


def rotation_number(break_map, tol=1e-10, max_iter=200_000, x0=0.1234):
    """Rotation number with a proven error bound.

    The estimate is the Farey mediant of the two current neighbor fractions;
    the true rotation number lies strictly between those fractions, whose gap
    is exactly 1/(q_left * q_right). Raises ToleranceNotReached (carrying
    .best and .error) when max_iter iterates cannot certify tol.
    """
    est = _closest_return_scan(break_map, x0, max_iter, tol=tol)
    if not est.exact and est.error > tol:
        raise ToleranceNotReached(
            f"error bound {est.error:.3e} > tol {tol:.3e} after "
            f"{est.iterations} iterates",
            best=est,
            error=est.error,
        )
    return est


def measure_quotients(break_map, depth, max_iter=2_000_000, x0=0.1234):
    """First `depth` partial quotients of the rotation number of a map.

    All integers come from orbit order alone. Raises DepthUnreliable with the
    confirmed prefix in .partial when max_iter iterates close fewer than
    `depth` side runs.
    """
    est = _closest_return_scan(break_map, x0, max_iter, depth=depth)
    if len(est.quotients) < depth:
        raise DepthUnreliable(
            f"only {len(est.quotients)} quotients confirmed in "
            f"{est.iterations} iterates",
            partial=list(est.quotients),
        )
    return ContinuedFraction(est.quotients[:depth])


def first_return_times(cf, count=None):
    """Denominators q_1, q_2, ... from a ContinuedFraction."""
    return cf.denominators(count)


def tune_offset(make_map, target, tol=1e-8, bracket=(0.0, 1.0 - 1e-9),
                meas_iter=150_000, max_steps=80):
    """Find `offset` such that rotation_number(make_map(offset)) = target.

    make_map: callable offset -> circle map (e.g. lambda t: ExpBreakMap(0.8, t)).
    The rotation number is nondecreasing in an additive offset, so bisection
    applies. Raises BracketFailure when the bracket cannot contain the target
    and ToleranceNotReached when measurement noise swamps the tolerance.
    """

    def measure(t):
        try:
            est = rotation_number(make_map(t), tol=tol / 4, max_iter=meas_iter)
            return est.value, est.error
        except ToleranceNotReached as exc:
            if exc.best is None:
                return 0.0, 1.0
            return exc.best.value, exc.error

    lo, hi = bracket
    rho_lo, _ = measure(lo)
    rho_hi, _ = measure(hi)
    if not (rho_lo <= target <= rho_hi):
        raise BracketFailure(
            f"target {target} outside measured bracket [{rho_lo:.6f}, {rho_hi:.6f}]"
        )
    t = lo
    for _ in range(max_steps):
        t = 0.5 * (lo + hi)
        rho_t, err_t = measure(t)
        if abs(rho_t - target) <= tol and err_t <= tol:
            return t
        if rho_t < target:
            lo = t
        else:
            hi = t
    rho_t, err_t = measure(t)
    if abs(rho_t - target) <= tol + err_t:
        return t
    raise ToleranceNotReached(
        f"offset bisection stalled at rho={rho_t:.12f} (err {err_t:.2e})",
        best=t,
        error=abs(rho_t - target),
    )
