"""Dynamical partitions, their refinement hierarchy, and the classical
geometry checks that come with them.

The level-n partition of the circle under a homeomorphism T with return
times q_n, q_{n+1} is generated by the orbit points x_i = T^i(x_base) for
0 <= i < q_n + q_{n+1}. Its elements fall into two generations: spans of
orbit-index difference q_n (there are q_{n+1} of them) and spans of
difference q_{n+1} (there are q_n). The implementation stores the sorted
endpoint positions together with their orbit indices; the generation
structure is then read off the index differences of circularly adjacent
points, which doubles as a strong self-validation of the whole object.

Also here: the renormalization operator on function pairs, normalized
return maps with their jump-ratio identities, Denjoy/Finzi/comparability
checks, two-sided partitions, and barycentric-coefficient scans.
"""

import bisect
import math
from dataclasses import dataclass

import numpy as np

from .circle import ArcInterval, BreakMap
from .errors import (
    ConfigError,
    DomainViolation,
    NotQnSmall,
    OrbitCollision,
    OrbitHitsBreak,
    PrecisionExhausted,
)
from .mobius import Mobius, affine, compose_chain
from .numerics import ccw_dist, in_ccw_arc, wrap
from .rotation import measure_quotients


def _default_base(break_map):
    """Partition base point: the interior break if there is one, else the
    break at the wrap point, else 0."""
    breaks = break_map.break_points()
    for b in breaks:
        if b != 0.0:
            return b
    return breaks[0] if breaks else 0.0


def _return_times(break_map, level, cf):
    if cf is None:
        cf = measure_quotients(break_map, depth=level + 2)
    qs = cf.q
    if len(qs) < level + 3:
        raise ConfigError(
            f"continued fraction too short for level {level}: need q_0..q_{level + 2}"
        )
    return cf, qs


@dataclass(frozen=True)
class PartitionElement:
    interval: ArcInterval
    generation: int  # n or n+1
    orbit_index: int  # element is T^orbit_index of the generator
    slot: int  # position in circular order

    @property
    def length(self):
        return self.interval.length


class DynamicalPartition:
    """Level-n partition, stored as sorted endpoint positions + orbit indices.

    Works in double precision (numpy) or, when the map carries a dps
    setting, in mpmath precision (plain lists of mpf). All structure
    invariants are checked at build time; a violation raises
    PrecisionExhausted because on valid input only a precision floor can
    produce one.
    """

    def __init__(self, break_map, level, base, points, orbit_index, q_pair, cf):
        self.map = break_map
        self.level = level
        self.base = base
        self.points = points  # sorted positions
        self.orbit_index = orbit_index  # orbit index per sorted position
        self.q = q_pair  # (q_n, q_{n+1})
        self.cf = cf
        self.mp = bool(break_map.dps)
        self._slot_of_index = None
        self._validate()

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, break_map, level, base=None, cf=None):
        if level < 0:
            raise ConfigError("partition level must be >= 0")
        cf, qs = _return_times(break_map, level, cf)
        q_n, q_n1 = qs[level], qs[level + 1]
        if q_n == q_n1:
            raise ConfigError(
                f"level-{level} partition is ambiguous when q_{level} = "
                f"q_{level + 1} = {q_n}; start one level deeper"
            )
        count = q_n + q_n1
        if base is None:
            base = _default_base(break_map)
        orbit = break_map.orbit(base, count - 1)
        if isinstance(orbit, np.ndarray):
            order = np.argsort(orbit, kind="stable")
            points = orbit[order]
            idx = order.astype(np.int64)
        else:
            order = sorted(range(count), key=orbit.__getitem__)
            points = [orbit[i] for i in order]
            idx = np.array(order, dtype=np.int64)
        return cls(break_map, level, base, points, idx, (q_n, q_n1), cf)

    def _validate(self):
        q_n, q_n1 = self.q
        count = q_n + q_n1
        if len(self.points) != count:
            raise PrecisionExhausted(
                f"expected {count} distinct endpoints, have {len(self.points)}"
            )
        diffs = np.diff(np.append(self.orbit_index, self.orbit_index[0]))
        absd = np.abs(diffs)
        n_gen_n = int(np.count_nonzero(absd == q_n))
        n_gen_n1 = int(np.count_nonzero(absd == q_n1))
        if n_gen_n != q_n1 or n_gen_n + n_gen_n1 != count:
            raise PrecisionExhausted(
                f"index-difference structure violated at level {self.level}: "
                f"{n_gen_n} spans of q_n={q_n}, {n_gen_n1} of q_n+1={q_n1} "
                f"(expected {q_n1} and {q_n}); endpoint order has collapsed"
            )
        # distinctness of positions (duplicates collapse ordering silently)
        if self.mp:
            dup = any(self.points[j] == self.points[j + 1] for j in range(count - 1))
        else:
            dup = bool(np.any(np.diff(self.points) <= 0.0))
        if dup:
            raise PrecisionExhausted(
                f"coincident endpoints at level {self.level}: precision floor reached"
            )

    # -- basic access --------------------------------------------------------

    def __len__(self):
        return len(self.points)

    def lengths(self):
        """Element lengths in circular order (element j spans points[j] ->
        points[j+1])."""
        if self.mp:
            out = [self.points[j + 1] - self.points[j] for j in range(len(self) - 1)]
            out.append(1 + self.points[0] - self.points[-1])
            return out
        d = np.diff(self.points)
        last = 1.0 + self.points[0] - self.points[-1]
        return np.append(d, last)

    def generation_of(self, slot):
        q_n, q_n1 = self.q
        nxt = (slot + 1) % len(self)
        d = abs(int(self.orbit_index[nxt]) - int(self.orbit_index[slot]))
        return self.level if d == q_n else self.level + 1

    def element(self, slot):
        nxt = (slot + 1) % len(self)
        left = self.points[slot]
        right = self.points[nxt]
        gen = self.generation_of(slot)
        oi = min(int(self.orbit_index[slot]), int(self.orbit_index[nxt]))
        return PartitionElement(
            ArcInterval(float(left), float(right)), gen, oi, slot
        )

    def __iter__(self):
        return (self.element(j) for j in range(len(self)))

    def slot_of(self, generation, orbit_i):
        """Slot of the element T^orbit_i(generator of `generation`)."""
        if self._slot_of_index is None:
            table = {}
            for j in range(len(self)):
                e_gen = self.generation_of(j)
                nxt = (j + 1) % len(self)
                oi = min(int(self.orbit_index[j]), int(self.orbit_index[nxt]))
                table[(e_gen, oi)] = j
            self._slot_of_index = table
        return self._slot_of_index[(generation, orbit_i)]

    def locate(self, x):
        """Slot of the element containing x (half-open [left, right))."""
        j = bisect.bisect_right(self.points, x) - 1
        if j < 0:
            j = len(self) - 1  # wrap-around element
        return j

    def endpoint_set(self):
        return set(float(p) for p in self.points)

    def rows(self):
        """(slot, generation, orbit_index, left, length) table."""
        out = []
        lens = self.lengths()
        for j in range(len(self)):
            e = self.element(j)
            out.append((j, e.generation, e.orbit_index, float(self.points[j]),
                        float(lens[j])))
        return out


def build_partition(break_map, base, level, cf=None):
    """Level-n dynamical partition based at `base` (None = break point)."""
    return DynamicalPartition.build(break_map, level, base=base, cf=cf)


def refine(partition):
    """The level-(n+1) partition. Built fresh from the longer orbit; the
    defining endpoints of the old partition are a subset of the new ones."""
    return DynamicalPartition.build(
        partition.map, partition.level + 1, base=partition.base, cf=partition.cf
    )


# -- refinement hierarchy with split words -----------------------------------


class PartitionHierarchy:
    """Levels base..base+depth with per-element descent words.

    Each refinement step must be binary (golden regime): a generation-n
    element splits into exactly two children, labeled '0' (the child whose
    endpoint indices differ by q_{n+2}) and '1' (the sibling), while
    generation-(n+1) elements are carried over unchanged and labeled 'a'.
    Words accumulate root-first, so an element of level base+k carries a
    word of length k.
    """

    def __init__(self, break_map, base_level, depth, base=None, cf=None):
        cf, qs = _return_times(break_map, base_level + depth + 1, cf)
        for n in range(base_level, base_level + depth):
            if qs[n + 2] != qs[n + 1] + qs[n]:
                raise ConfigError(
                    f"refinement {n}->{n + 1} is not binary (k_{n + 2} != 1); "
                    "start the hierarchy past the head of the continued fraction"
                )
        self.cf = cf
        self.base_level = base_level
        self.depth = depth
        self.levels = []
        self.words = []
        self.parent = []
        prev = None
        for n in range(base_level, base_level + depth + 1):
            part = DynamicalPartition.build(break_map, n, base=base, cf=cf)
            if prev is None:
                self.levels.append(part)
                self.words.append([""] * len(part))
                self.parent.append([-1] * len(part))
            else:
                w, par = self._label_level(prev, part)
                self.levels.append(part)
                self.words.append(w)
                self.parent.append(par)
            prev = part

    def _label_level(self, coarse, fine):
        q_fine = fine.q  # (q_{n+1}, q_{n+2})
        pairs_coarse = set()
        for j in range(len(coarse)):
            nxt = (j + 1) % len(coarse)
            a, b = int(coarse.orbit_index[j]), int(coarse.orbit_index[nxt])
            pairs_coarse.add((min(a, b), max(a, b)))
        words = []
        parents = []
        coarse_words = self.words[-1]
        split_children = {}  # parent slot -> set of labels seen
        for j in range(len(fine)):
            nxt = (j + 1) % len(fine)
            a, b = int(fine.orbit_index[j]), int(fine.orbit_index[nxt])
            pj = coarse.locate(fine.points[j])
            parents.append(pj)
            key = (min(a, b), max(a, b))
            d = abs(a - b)
            if key in pairs_coarse:
                label = "a"
            elif d == q_fine[1]:
                label = "0"
            elif d == q_fine[0]:
                label = "1"
            else:  # unreachable when both partitions validated
                raise PrecisionExhausted(
                    f"unclassifiable child with index span {d} at level {fine.level}"
                )
            if label != "a":
                split_children.setdefault(pj, set()).add(label)
            words.append(coarse_words[pj] + label)
        for pj, labels in split_children.items():
            if labels != {"0", "1"}:
                raise PrecisionExhausted(
                    f"element {pj} of level {coarse.level} split into labels "
                    f"{sorted(labels)}; expected one '0' and one '1'"
                )
        return words, parents

    def level(self, n):
        return self.levels[n - self.base_level]

    def words_at(self, n):
        return self.words[n - self.base_level]

    def word_slots(self, n):
        """word -> list of slots at level n."""
        table = {}
        for j, w in enumerate(self.words_at(n)):
            table.setdefault(w, []).append(j)
        return table

    def parent_slot(self, n, slot):
        return self.parent[n - self.base_level][slot]


# -- Denjoy / Finzi / comparability ------------------------------------------


@dataclass
class DenjoyReport:
    n: int
    q_n: int
    v: float
    products_log: np.ndarray
    passed: bool

    @property
    def worst(self):
        return float(np.max(np.abs(self.products_log)))


def _check_orbit_clear(break_map, pts, breaks):
    if isinstance(pts, np.ndarray):
        for b in breaks:
            if np.any(pts == b):
                raise OrbitHitsBreak(f"orbit hits break point {b}")
    else:
        if pts in breaks:
            raise OrbitHitsBreak(f"orbit hits break point {pts}")


def check_denjoy(break_map, y0, n, cf=None, v=None):
    """Denjoy inequality at a single base point.

    Returns (product, v, passed) with product = prod_{s<q_n} T'(y_s).
    Raises OrbitHitsBreak when an orbit point lands exactly on a break.
    """
    rep = denjoy_battery(break_map, n, base_points=np.array([float(y0)]), cf=cf, v=v)
    product = float(np.exp(rep.products_log[0]))
    return product, rep.v, rep.passed


def denjoy_battery(break_map, n, count=100, base_points=None, seed=20260816,
                   cf=None, v=None):
    """Vectorized Denjoy check over many base points."""
    cf, qs = _return_times(break_map, n, cf)
    q_n = qs[n]
    if v is None:
        _, v = break_map.log_deriv_total_variation()
    v = float(v)
    if base_points is None:
        rng = np.random.default_rng(seed)
        base_points = rng.random(count)
    x = np.array(base_points, dtype=float)
    breaks = break_map.break_points()
    logs = np.zeros_like(x)
    for _ in range(q_n):
        _check_orbit_clear(break_map, x, breaks)
        logs += np.log(break_map.deriv(x))
        x = break_map(x)
    passed = bool(np.all(np.abs(logs) <= v * (1 + 1e-12) + 1e-12))
    return DenjoyReport(n, q_n, v, logs, passed)


def qn_small(break_map, tau, t, n, cf=None):
    """Direct check of Definition: T^i([tau, t]), 0 <= i < q_n, pairwise
    disjoint except for endpoints. The interval is the ccw arc tau -> t."""
    cf, qs = _return_times(break_map, n, cf)
    q_n = qs[n]
    a, b = float(tau), float(t)
    ivs = []
    for _ in range(q_n):
        ivs.append((a, ccw_dist(a, b)))
        a, b = float(break_map(a)), float(break_map(b))
    ivs.sort()
    total = sum(ln for _, ln in ivs)
    if total > 1.0:
        return False
    for j in range(len(ivs)):
        left_j, len_j = ivs[j]
        left_next = ivs[(j + 1) % len(ivs)][0]
        gap = ccw_dist(left_j, left_next) if len(ivs) > 1 else 1.0
        if len_j > gap + 1e-15:
            return False
    return True


def order_qn_small(break_map, tau, t, n, cf=None):
    """Order criterion: tau < t <= T^{q_{n-1}}(tau) or T^{q_{n-1}}(t) <= tau < t
    in circular order (arcs read ccw)."""
    cf, qs = _return_times(break_map, n, cf)
    q_prev = qs[n - 1]
    tau, t = float(tau), float(t)
    if t == tau:
        return False
    fw_tau = float(break_map.iterate(tau, q_prev))
    fw_t = float(break_map.iterate(t, q_prev))
    inside_fwd = (in_ccw_arc(t, tau, fw_tau) and t != tau) or t == fw_tau
    inside_bwd = in_ccw_arc(tau, fw_t, t)
    return inside_fwd or inside_bwd


@dataclass
class FinziReport:
    n: int
    q_n: int
    v: float
    ratios_log: np.ndarray  # log DT^k(x) - log DT^k(y), k = 0..q_n-1
    passed: bool

    @property
    def worst(self):
        return float(np.max(np.abs(self.ratios_log)))


def check_finzi(break_map, x, y, n, k=None, cf=None, v=None):
    """Finzi inequality on a q_n-small interval (x, y).

    With k given, returns (ratio DT^k(x)/DT^k(y), v, passed). Without k,
    returns a FinziReport over all 0 <= k < q_n. Raises NotQnSmall when the
    direct disjointness check fails.
    """
    cf, qs = _return_times(break_map, n, cf)
    q_n = qs[n]
    if not qn_small(break_map, x, y, n, cf=cf):
        raise NotQnSmall(f"interval ({x}, {y}) is not q_{n}-small")
    if v is None:
        _, v = break_map.log_deriv_total_variation()
    v = float(v)
    breaks = break_map.break_points()
    a, b = float(x), float(y)
    la = lb = 0.0
    logs = [0.0]
    for _ in range(q_n - 1):
        _check_orbit_clear(break_map, a, breaks)
        _check_orbit_clear(break_map, b, breaks)
        la += math.log(break_map.deriv(a))
        lb += math.log(break_map.deriv(b))
        a, b = float(break_map(a)), float(break_map(b))
        logs.append(la - lb)
    arr = np.array(logs)
    passed = bool(np.all(np.abs(arr) <= v * (1 + 1e-12) + 1e-12))
    if k is not None:
        return float(np.exp(arr[k])), v, bool(abs(arr[k]) <= v * (1 + 1e-12) + 1e-12)
    return FinziReport(n, q_n, v, arr, passed)


def comparability_census(partition, v=None):
    """For each element, the number of e^v-comparable partners.

    Returns (counts, min_count, threshold n-1, passed). Two intervals are
    K-comparable when K^{-1}|J| <= |I| <= K|J|.
    """
    if v is None:
        _, v = partition.map.log_deriv_total_variation()
    K = math.exp(float(v))
    lens = np.sort(np.asarray(partition.lengths(), dtype=float))
    orig = np.asarray(partition.lengths(), dtype=float)
    lo = np.searchsorted(lens, orig / K * (1 - 1e-12), side="left")
    hi = np.searchsorted(lens, orig * K * (1 + 1e-12), side="right")
    counts = hi - lo - 1  # exclude the element itself
    threshold = partition.level - 1
    min_count = int(counts.min())
    return counts, min_count, threshold, bool(min_count >= threshold)


# -- renormalization of function pairs ----------------------------------------


def _pair_precondition(f, g, alpha, tol=1e-9):
    checks = (
        ("f(0) = alpha", abs(f(0.0) - alpha)),
        ("g(0) = -1", abs(g(0.0) + 1.0)),
        ("f(-1) = g(alpha)", abs(f(-1.0) - g(alpha))),
    )
    for name, err in checks:
        if not err <= tol * max(1.0, abs(alpha)):
            raise DomainViolation(f"pair precondition {name} violated by {err:.3e}")


def renormalize_pair(f, g, alpha):
    """One renormalization step on a function pair:

        f~(x) = -a^{-1} f(g(-a x)),   g~(x) = -a^{-1} f(-a x),
        a' = -a^{-1} f(-1),

    with a = alpha. Mobius inputs are composed exactly at coefficient level;
    other callables are wrapped. Returns (f~, g~, a')."""
    _pair_precondition(f, g, alpha)
    alpha_new = -f(-1.0) / alpha
    if isinstance(f, Mobius) and isinstance(g, Mobius):
        pre = affine(-alpha, 0.0 * alpha)
        post = affine(-1.0 / alpha, 0.0 * alpha)
        f_new = compose_chain([pre, g, f, post])
        g_new = compose_chain([pre, f, post])
        return f_new, g_new, alpha_new

    def f_new(x):
        return -f(g(-alpha * x)) / alpha

    def g_new(x):
        return -f(-alpha * x) / alpha

    return f_new, g_new, alpha_new


def pair_jump_at_zero(f, g):
    """sqrt(Df(0-)/Dg(0+)): the jump ratio of the pair at its inner break."""
    df = f.deriv(0.0) if isinstance(f, Mobius) else _num_deriv(f, 0.0, -1)
    dg = g.deriv(0.0) if isinstance(g, Mobius) else _num_deriv(g, 0.0, +1)
    return math.sqrt(float(df) / float(dg))


def jump_transform_check(f, g, alpha):
    """Verify the one-step jump-ratio transform at the inner break:

        c_new(0) = c(0)^{-1} sqrt(Df(-1+)),

    where c(0) = sqrt(Df(0)/Dg(0)) is the pair's own jump ratio at 0.
    Returns (lhs, rhs): measured new jump ratio and the predicted value."""
    f2, g2, _ = renormalize_pair(f, g, alpha)
    lhs = pair_jump_at_zero(f2, g2)
    df_end = f.deriv(-1.0) if isinstance(f, Mobius) else _num_deriv(f, -1.0, +1)
    rhs = math.sqrt(float(df_end)) / pair_jump_at_zero(f, g)
    return lhs, rhs


def _num_deriv(fn, x, side, h=1e-7):
    return (fn(x + side * h) - fn(x)) / (side * h)


# -- normalized return maps ----------------------------------------------------


class RenormalizedReturnMap:
    """The pair (T^{q_m}, T^{q_{m+1}}) restricted to the arc between
    x_{q_{m+1}} and x_{q_m} (the arc containing the break point), rewritten
    in a chart sending x_{q_{m+1}} -> 0 and x_{q_m} -> 1.

    The chart's circular orientation alternates with m: when the break
    point lies on the ccw arc from x_{q_{m+1}} to x_{q_m} the chart is
    orientation-preserving, otherwise reversing. Branch assignment is
    orientation-independent (the branch left of a_m in the chart is always
    the q_m-iterate), but CHART-side one-sided derivatives at a_m swap
    circle sides on reversing levels; jump_sq_* use fixed circle sides (the
    q_m chain from the cw side of the break, the q_{m+1} chain from the ccw
    side), for which the product identity

        jump_sq_break * jump_sq_zero = (jump ratio of T at the break)^2

    holds at every level of a one-break map.
    """

    def __init__(self, break_map, m, cf=None, base=None):
        if m < 1:
            raise ConfigError("return-map level must be >= 1")
        cf, qs = _return_times(break_map, m + 1, cf)
        self.map = break_map
        self.m = m
        self.q_m = qs[m]
        self.q_m1 = qs[m + 1]
        self.x_b = _default_base(break_map) if base is None else base
        orbit = break_map.orbit(self.x_b, self.q_m + self.q_m1)
        self.orbit = orbit
        x_qm = float(orbit[self.q_m])
        x_qm1 = float(orbit[self.q_m1])
        self.x_qm, self.x_qm1 = x_qm, x_qm1
        self.preserving = in_ccw_arc(self.x_b, x_qm1, x_qm)
        if self.preserving:
            self.span = ccw_dist(x_qm1, x_qm)
        else:
            if not in_ccw_arc(self.x_b, x_qm, x_qm1):
                raise PrecisionExhausted(
                    "break point not inside the return arc; orbit order collapsed"
                )
            self.span = ccw_dist(x_qm, x_qm1)
        self.a_m = self.chart(self.x_b)
        self._breaks = tuple(float(b) for b in break_map.break_points())

    # chart and its inverse ---------------------------------------------------

    def chart(self, x):
        if self.preserving:
            return ccw_dist(self.x_qm1, x) / self.span
        return ccw_dist(x, self.x_qm1) / self.span

    def chart_inverse(self, z):
        if self.preserving:
            return wrap(self.x_qm1 + z * self.span)
        return wrap(self.x_qm1 - z * self.span)

    # the circle map in the chart ----------------------------------------------

    def __call__(self, z):
        z = z - math.floor(z)
        x = self.chart_inverse(z)
        steps = self.q_m if z < self.a_m else self.q_m1
        y = self.map.iterate(x, steps)
        out = self.chart(y)
        # the image must land back inside the chart arc
        if out > 1.0 + 1e-9:
            raise PrecisionExhausted(f"return image left the chart arc (z={z})")
        return min(out, 1.0) % 1.0

    def deriv(self, z):
        """DT_m(z): chart slopes cancel, leaving the plain chain product."""
        z = z - math.floor(z)
        x = self.chart_inverse(z)
        steps = self.q_m if z < self.a_m else self.q_m1
        out = 1.0
        for _ in range(steps):
            out *= self.map.deriv(x)
            x = self.map(x)
        return out

    # jump ratios ---------------------------------------------------------------

    def _chain(self, start, steps, side="+"):
        """log prod of T' along steps of the orbit from `start`.

        The side applies to EVERY factor, not just the first: approaching the
        start from its cw (resp. ccw) side, an orientation-preserving map
        approaches every image from the same side, and later orbit points may
        land on other break points (the glued pair families map one break
        onto the other), where the side genuinely matters. Orbit points that
        land within 1e-12 of a break are snapped onto it so the one-sided
        value is actually used; at the orbit lengths involved no legitimate
        point comes anywhere near that close."""
        x = start
        total = math.log(self.map.deriv(x, side=side))
        for _ in range(steps - 1):
            x = self.map(x)
            for b in self._breaks:
                d = abs(x - b)
                if min(d, 1.0 - d) < 1e-12:
                    x = b
                    break
            total += math.log(self.map.deriv(x, side=side))
        return total

    def jump_sq_break(self):
        """DT^{q_m}(x_b-) / DT^{q_{m+1}}(x_b+), fixed circle sides."""
        num = self._chain(self.x_b, self.q_m, side="-")
        den = self._chain(self.x_b, self.q_m1, side="+")
        return math.exp(num - den)

    def jump_sq_zero(self):
        """DT^{q_{m+1}}(x_{q_m}) / DT^{q_m}(x_{q_{m+1}}) (no sides needed)."""
        num = self._chain(self.x_qm, self.q_m1)
        den = self._chain(self.x_qm1, self.q_m)
        return math.exp(num - den)

    def jump_sq_break_chart(self):
        """Chart-side jump DT_m(a_m-)/DT_m(a_m+): equals jump_sq_break on
        orientation-preserving levels and its reciprocal on reversing ones."""
        j = self.jump_sq_break()
        return j if self.preserving else 1.0 / j

    # boundary identities ---------------------------------------------------------

    def boundary_residuals(self):
        """(|T_m(a_m-) - 1|, |T_m(a_m+) - 0|, |T_m(0) - T_m(1-)|)."""
        r1 = abs(self.chart(self.map.iterate(self.x_b, self.q_m)) - 1.0)
        r2 = abs(self.chart(self.map.iterate(self.x_b, self.q_m1)) - 0.0)
        t0 = self.chart(self.map.iterate(self.x_qm1, self.q_m))
        t1 = self.chart(self.map.iterate(self.x_qm, self.q_m1))
        r3 = abs(t0 - t1)
        return r1, r2, r3


def normalized_return_map(break_map, m, cf=None, base=None):
    return RenormalizedReturnMap(break_map, m, cf=cf, base=base)


# -- two-sided partitions --------------------------------------------------------


class TwoSidedPartition(DynamicalPartition):
    """Partition generated by {x_{-q_{n+1}}, ..., x_0, ..., x_{q_n+q_{n+1}-1}}:
    the ordinary level-n endpoints plus q_{n+1} backward orbit points.
    Element count is q_n + 2 q_{n+1}. Orbit indices are stored shifted by
    +q_{n+1} so they stay nonnegative; `index_shift` records the offset."""

    def __init__(self, break_map, level, base, points, orbit_index, q_pair, cf,
                 index_shift):
        self.index_shift = index_shift
        super().__init__(break_map, level, base, points, orbit_index, q_pair, cf)

    @classmethod
    def build(cls, break_map, level, base=None, cf=None):
        if level < 1:
            raise ConfigError("partition level must be >= 1")
        cf, qs = _return_times(break_map, level, cf)
        q_n, q_n1 = qs[level], qs[level + 1]
        if base is None:
            base = _default_base(break_map)
        fwd = break_map.orbit(base, q_n + q_n1 - 1)
        bwd = break_map.backward_orbit(base, q_n1)
        pts = list(bwd[1:][::-1]) + list(fwd)  # x_{-q_{n+1}} .. x_{q_n+q_{n+1}-1}
        count = len(pts)
        order = sorted(range(count), key=pts.__getitem__)
        if isinstance(fwd, np.ndarray):
            points = np.array([pts[i] for i in order], dtype=float)
        else:
            points = [pts[i] for i in order]
        idx = np.array(order, dtype=np.int64)  # shifted: true index = idx - q_{n+1}
        return cls(break_map, level, base, points, idx, (q_n, q_n1), cf, q_n1)

    def _validate(self):
        q_n, q_n1 = self.q
        count = q_n + 2 * q_n1
        if len(self.points) != count:
            raise PrecisionExhausted(
                f"expected {count} distinct endpoints, have {len(self.points)}"
            )
        # The point set is the contiguous orbit block of length q_n + 2 q_{n+1}.
        # With binary refinement at this level (q_{n+2} = q_{n+1} + q_n) that
        # count equals q_{n+1} + q_{n+2}, so adjacent-index spans are exactly
        # q_{n+1} (q_{n+2} of them) and q_{n+2} (q_{n+1} of them).
        diffs = np.abs(np.diff(np.append(self.orbit_index, self.orbit_index[0])))
        q_n2 = self.cf.q[self.level + 2]
        if q_n2 == q_n + q_n1:
            a = int(np.count_nonzero(diffs == q_n1))
            b = int(np.count_nonzero(diffs == q_n2))
            if a != q_n2 or b != q_n1:
                raise PrecisionExhausted(
                    f"index-difference structure violated at two-sided level "
                    f"{self.level}: {a} spans of {q_n1} and {b} of {q_n2} "
                    f"(expected {q_n2} and {q_n1}); order has collapsed"
                )
        elif np.any(diffs <= 0):
            raise PrecisionExhausted(
                f"degenerate index span at two-sided level {self.level}"
            )
        if self.mp:
            dup = any(self.points[j] == self.points[j + 1]
                      for j in range(count - 1))
        else:
            dup = bool(np.any(np.diff(self.points) <= 0.0))
        if dup:
            raise PrecisionExhausted(
                f"coincident endpoints at two-sided level {self.level}"
            )

    def generation_of(self, slot):
        q_n, q_n1 = self.q
        nxt = (slot + 1) % len(self)
        d = abs(int(self.orbit_index[nxt]) - int(self.orbit_index[slot]))
        if d == q_n1:
            return self.level + 1
        if d == q_n + q_n1:
            return self.level + 2
        raise PrecisionExhausted(
            f"two-sided span {d} matches neither q_{self.level + 1} nor "
            f"q_{self.level + 2}"
        )

    def true_index(self, slot):
        """Orbit index of sorted point `slot`, in -q_{n+1}..q_n+q_{n+1}-1."""
        return int(self.orbit_index[slot]) - self.index_shift


def two_sided_partition(break_map, level, base=None, cf=None):
    return TwoSidedPartition.build(break_map, level, base=base, cf=cf)


# -- barycentric coefficients ----------------------------------------------------


def barycentric_coefficient(partition, z):
    """min(distance to either endpoint)/length of the containing element.

    Values lie in (0, 1/2]; 0 would mean z sits on an endpoint."""
    j = partition.locate(z)
    left = partition.points[j]
    right = partition.points[(j + 1) % len(partition)]
    d_left = ccw_dist(float(left), float(z))
    d_right = ccw_dist(float(z), float(right))
    length = d_left + d_right
    if length == 0.0:
        raise PrecisionExhausted("degenerate element in barycentric evaluation")
    return min(d_left, d_right) / length


def kappa_profile(break_map, z0, levels, base=None, cf=None):
    """Barycentric coefficient of z0 at each level in `levels`."""
    cf, _ = _return_times(break_map, max(levels), cf)
    out = {}
    for n in levels:
        part = DynamicalPartition.build(break_map, n, base=base, cf=cf)
        out[n] = barycentric_coefficient(part, z0)
    return out


def single_occupancy(partition, z0, horizon):
    """True when the orbit z_0..z_{horizon-1} puts at most one point into
    each partition element. Raises OrbitCollision when two orbit points
    land in the same element (that is the failure being tested for)."""
    seen = {}
    x = float(z0)
    for k in range(horizon):
        j = partition.locate(x)
        if j in seen:
            raise OrbitCollision(
                f"orbit points {seen[j]} and {k} share element {j} "
                f"of level {partition.level}"
            )
        seen[j] = k
        x = float(partition.map(x))
    return True


def barycentric_scan(break_map, level, candidates=None, min_kappa=0.01,
                     base=None, cf=None, horizon=None):
    """Search for a base point z0 whose orbit stays barycentrically deep.

    For each candidate z0 the score is min over k < horizon of the
    barycentric coefficient of z_k in the level-n partition, subject to
    single occupancy. Returns (best z0, best score, report rows); rows are
    (z0, score, occupancy_ok). Candidates default to a coarse golden-spaced
    grid, which avoids orbit resonances with partition endpoints."""
    cf, qs = _return_times(break_map, level, cf)
    part = DynamicalPartition.build(break_map, level, base=base, cf=cf)
    if horizon is None:
        horizon = qs[level + 1]
    if candidates is None:
        g = (math.sqrt(5) - 1) / 2
        candidates = [wrap(0.1234567 + g * j * 0.61) for j in range(40)]
    rows = []
    best = (None, -1.0)
    for z0 in candidates:
        x = float(z0)
        score = 0.5
        try:
            single_occupancy(part, z0, horizon)
            occupancy_ok = True
        except OrbitCollision:
            occupancy_ok = False
        if occupancy_ok:
            for _ in range(horizon):
                score = min(score, barycentric_coefficient(part, x))
                x = float(break_map(x))
        else:
            score = 0.0
        rows.append((float(z0), float(score), occupancy_ok))
        if score > best[1]:
            best = (float(z0), float(score))
    if best[0] is None or best[1] < min_kappa:
        raise OrbitCollision(
            f"no candidate reached barycentric depth {min_kappa} at level {level}"
        )
    return best[0], best[1], rows


# -- nested-length bracket ---------------------------------------------------------


def nested_length_bracket(break_map, fit_levels, check_levels, l_values,
                          count=200, seed=20260816, base=None, cf=None,
                          headroom=2.0):
    """Two-sided bracket on nested containing-element lengths:

        C1 * theta_plus^l <= |I^(n+l)(z)| / |I^(n)(z)| <= C2 * theta_minus^l

    with theta_pm = (1 + e^{+-v})^{-1/2} from the map's variation.  The
    constants are fitted as the extreme normalized ratios over
    `fit_levels`, widened once by the fixed `headroom` factor (sampled
    extremes at other levels land near, not inside, the fit-set
    extremes), and then required to hold UNCHANGED over `check_levels`.
    Level-dependent drift would escape any fixed constants
    exponentially in n and fail here; the headroom only absorbs
    sampling scatter.  Ratios are sampled at `count` seeded random
    points per (n, l).  Returns a dict with the raw and widened
    constants, per-pair extremes, worst check margins (nonnegative =
    pass), and the pass flag.
    """
    if headroom < 1.0:
        raise ConfigError("headroom factor must be >= 1")
    fit_levels = sorted(set(int(n) for n in fit_levels))
    check_levels = sorted(set(int(n) for n in check_levels))
    l_values = sorted(set(int(l) for l in l_values))
    if not fit_levels or not l_values:
        raise ConfigError("need at least one fit level and one offset")
    if min(l_values) < 1:
        raise ConfigError("offsets must be >= 1")
    all_n = sorted(set(fit_levels) | set(check_levels))
    deepest = all_n[-1] + l_values[-1]
    parts = {}
    for lev in range(deepest, 0, -1):
        parts[lev] = DynamicalPartition.build(break_map, lev, base=base, cf=cf)
        if cf is None:
            cf = parts[lev].cf
    theta_plus, theta_minus = break_map.theta_bounds()
    theta_plus, theta_minus = float(theta_plus), float(theta_minus)
    rng = np.random.default_rng(seed)
    pts = rng.random(count)

    def elem_len(part, z):
        j = part.locate(z)
        return float(ccw_dist(part.points[j],
                              part.points[(j + 1) % len(part)]))

    ratios = {}
    for n in all_n:
        base_lens = np.array([elem_len(parts[n], z) for z in pts])
        for l in l_values:
            fine_lens = np.array([elem_len(parts[n + l], z) for z in pts])
            r = fine_lens / base_lens
            ratios[(n, l)] = (float(r.min()), float(r.max()))

    c1 = min(ratios[(n, l)][0] / theta_plus ** l
             for n in fit_levels for l in l_values)
    c2 = max(ratios[(n, l)][1] / theta_minus ** l
             for n in fit_levels for l in l_values)
    c1_eff = c1 / headroom
    c2_eff = c2 * headroom
    worst_low = math.inf
    worst_high = math.inf
    for n in check_levels:
        for l in l_values:
            lo, hi = ratios[(n, l)]
            worst_low = min(worst_low, lo - c1_eff * theta_plus ** l)
            worst_high = min(worst_high, c2_eff * theta_minus ** l - hi)
    tol = 1e-12
    passed = worst_low >= -tol and worst_high >= -tol
    return {
        "c1": c1, "c2": c2, "c1_eff": c1_eff, "c2_eff": c2_eff,
        "headroom": headroom,
        "theta_plus": theta_plus, "theta_minus": theta_minus,
        "ratios": ratios,
        "worst_low_margin": worst_low, "worst_high_margin": worst_high,
        "fit_levels": tuple(fit_levels), "check_levels": tuple(check_levels),
        "l_values": tuple(l_values), "count": count,
        "passed": passed,
    }


# -- rotation-case oracle ---------------------------------------------------------


def rotation_locate_oracle(rho, level, x, qs):
    """Element of P_n(rotation by rho, base 0) containing x, by linear scan
    over {i rho}: an independent cross-check for locate()."""
    count = qs[level] + qs[level + 1]
    best_i = None
    best_pos = None
    for i in range(count):
        pos = wrap(i * rho)
        if pos <= x and (best_pos is None or pos > best_pos):
            best_pos = pos
            best_i = i
    if best_i is None:  # x below every endpoint: wrap-around element
        for i in range(count):
            pos = wrap(i * rho)
            if best_pos is None or pos > best_pos:
                best_pos = pos
                best_i = i
    return best_i, best_pos


def rotation_case_prediction(level, k0, qs, k):
    """Case-1 predictor: z0 in the generation-(n+1) element with orbit index
    k0 implies z_k sits in the gen-(n+1) element k0+k while k < q_n - k0,
    then in the gen-n element k - (q_n - k0) afterwards."""
    q_n, q_n1 = qs[level], qs[level + 1]
    if not 0 <= k0 < q_n:
        raise ConfigError("case-1 applies to gen-(n+1) indices 0 <= k0 < q_n")
    if k < q_n - k0:
        return (level + 1, k0 + k)
    if k < q_n1:
        return (level, k - q_n + k0)
    raise ConfigError("predictor defined for k < q_{n+1}")
