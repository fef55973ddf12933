"""Symbolic coding of dynamical-partition elements onto a three-letter
subshift of finite type, the depth-k potential built from element-length
ratios, and two independent estimators of the leading transfer-operator
eigenvalue.

Alphabet {1, 0, a} with forward successor rule 1 -> {1,0}, 0 -> {a},
a -> {1,0} (symbol 'a' marks an element carried unchanged through one
refinement; '0' and '1' mark the two children of a split). Words label
elements root-first; the word of an element extends its parent's word by
one symbol, and for the eventually-binary continued fractions handled here
the word <-> element correspondence is a bijection at every depth.

Potentials live on REVERSED words (the transposed-matrix subshift): the
depth-k potential value keyed by the reversal of a forward word w is
log(|element(w)| / |element(parent of w)|). Carried elements coincide
with their parents, so the value is exactly 0.0 when w ends in 'a' and
strictly negative otherwise; the zeros are structural (they are what
makes the length telescope along a descent exact).

For maps with an actual break the table does NOT converge along k: the
renormalization of such maps is a period-2 cycle (the jump ratio of the
renormalized pair alternates between a value and its complement), so
tables of the same depth parity converge geometrically to one of two
parity potentials while consecutive depths stay a fixed distance apart.
Rotations collapse the two parities into one. Both separations are
measured and reported (cauchy_sups: k vs k-2, the decaying one;
parity_sups: k vs k-1, the plateau whose height is the 2-cycle
amplitude). Eigenvalue estimates built from one table inherit its
parity; compare estimates across k and k-2, never k and k-1, and use
eigenvalue_lengths for a parity-free reference value.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    InconclusiveWithinErrorBars,
    NoConvergence,
    OrbitOfBreak,
    PrecisionExhausted,
)
from .numerics import aitken
from .partition import DynamicalPartition, PartitionHierarchy, _return_times

SYMBOLS = ("1", "0", "a")
SUCC = {"1": ("1", "0"), "0": ("a",), "a": ("1", "0")}


def is_admissible(word):
    """Forward admissibility of a word (string over {1,0,a})."""
    if any(s not in SUCC for s in word):
        return False
    return all(b in SUCC[a] for a, b in zip(word, word[1:]))


def admissible_words(n):
    """All admissible forward words of length n, in stable lexical order."""
    if n < 1:
        raise ConfigError("word length must be >= 1")
    words = list(SYMBOLS)
    for _ in range(n - 1):
        words = [w + c for w in words for c in SUCC[w[-1]]]
    return words


def gamma_tail(symbol, length):
    """The periodic tail appended after a reversed word ending in `symbol`:
    alternating starting with 'a' after '0' or '1', with '0' after 'a'."""
    if symbol in ("0", "1"):
        pat = "a0"
    elif symbol == "a":
        pat = "0a"
    else:
        raise ConfigError(f"unknown symbol {symbol!r}")
    return (pat * (length // 2 + 1))[:length]


def pad_reversed(rev, k):
    """Extend a reversed word to length k with its canonical tail."""
    if len(rev) >= k:
        return rev[:k]
    return rev + gamma_tail(rev[-1], k - len(rev))


class SymbolicCoding:
    """Word <-> element bijection for a map with golden-type combinatorics.

    The coding is rooted at the unique level b whose partition has exactly
    three elements (q_b = 1, q_{b+1} = 2); depth-d words then label the
    elements of level b + d - 1. Root symbols: the young-generation
    generator takes '0' (it is carried through the next refinement), the
    old-generation generator takes 'a', and the remaining element '1'.
    Every deeper element's word appends its refinement label.
    """

    def __init__(self, break_map, max_depth, base=None, cf=None):
        cf, qs = _return_times(break_map, max_depth + 2, cf)
        base_level = None
        for b in (0, 1):
            if qs[b] == 1 and qs[b + 1] == 2:
                base_level = b
                break
        if base_level is None:
            raise ConfigError(
                "symbolic coding needs a level with exactly 3 elements "
                f"(q_n, q_n+1) = (1, 2); head of this map's cf is {cf.quotients[:3]}"
            )
        if max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        self.map = break_map
        self.cf = cf
        self.base_level = base_level
        self.max_depth = max_depth
        self.hierarchy = PartitionHierarchy(
            break_map, base_level, max_depth - 1, base=base, cf=cf
        )
        root = self.hierarchy.level(base_level)
        self._root_words = [None] * len(root)
        self._root_words[root.slot_of(base_level + 1, 0)] = "0"
        self._root_words[root.slot_of(base_level, 0)] = "a"
        self._root_words[root.slot_of(base_level, 1)] = "1"
        if any(w is None for w in self._root_words):
            raise PrecisionExhausted("root partition did not yield 3 labeled slots")
        # full word tables per depth, with bijectivity and admissibility checks
        self._word_of = []  # depth d -> list slot -> word
        self._slot_of = []  # depth d -> dict word -> slot
        for d in range(1, max_depth + 1):
            lvl = self.level_of_depth(d)
            labels = self.hierarchy.words_at(lvl)
            part = self.hierarchy.level(lvl)
            words = []
            for j in range(len(part)):
                r = j if d == 1 else self._root_slot(lvl, j)
                words.append(self._root_words[r] + labels[j])
            table = {}
            for j, w in enumerate(words):
                if not is_admissible(w):
                    raise PrecisionExhausted(f"inadmissible word {w} at depth {d}")
                if w in table:
                    raise PrecisionExhausted(f"duplicate word {w} at depth {d}")
                table[w] = j
            self._word_of.append(words)
            self._slot_of.append(table)

    def _root_slot(self, level, slot):
        while level > self.base_level:
            slot = self.hierarchy.parent_slot(level, slot)
            level -= 1
        return slot

    def level_of_depth(self, d):
        return self.base_level + d - 1

    def depth_of_level(self, level):
        return level - self.base_level + 1

    def word_of(self, depth, slot):
        return self._word_of[depth - 1][slot]

    def slot_of_word(self, word):
        d = len(word)
        if not 1 <= d <= self.max_depth:
            raise ConfigError(f"no table at depth {d}")
        try:
            return self._slot_of[d - 1][word]
        except KeyError:
            raise ConfigError(f"word {word} is not admissible") from None

    def element_of_word(self, word):
        part = self.hierarchy.level(self.level_of_depth(len(word)))
        return part.element(self.slot_of_word(word))

    def partition_at_depth(self, d):
        return self.hierarchy.level(self.level_of_depth(d))

    def encode(self, z, depth):
        """Word of the depth-`depth` element containing z.

        Raises OrbitOfBreak when z sits exactly on a partition endpoint
        (those are the forward orbit points of the base break point)."""
        part = self.partition_at_depth(depth)
        j = part.locate(float(z))
        if float(part.points[j]) == float(z):
            raise OrbitOfBreak(f"{z} is an endpoint (forward orbit of the base)")
        return self.word_of(depth, j)

    def words_at_depth(self, d):
        return list(self._word_of[d - 1])


# -- potential tables ------------------------------------------------------------


@dataclass
class PotentialTable:
    """Depth-k potential on reversed words.

    values: dict reversed-word -> log length ratio. Zero exactly on words
    whose first reversed symbol is 'a' (carried elements), strictly
    negative elsewhere.
    cauchy_sups: [(depth, sup |U_d - U_{d-2}| over shared prefixes)] for
    depths 4..k — the same-parity separations, which decay geometrically.
    parity_sups: [(depth, sup |U_d - U_{d-1}|)] for depths 3..k — these
    level off at the renormalization 2-cycle amplitude (near zero only
    for rotations).
    """

    depth: int
    values: dict
    cauchy_sups: tuple
    parity_sups: tuple

    def lookup(self, rev_word):
        return self.values[pad_reversed(rev_word, self.depth)]

    def decay_ratios(self):
        sups = [s for _, s in self.cauchy_sups]
        return [sups[i + 1] / sups[i] for i in range(len(sups) - 1) if sups[i] > 0]

    def parity_amplitude(self):
        return self.parity_sups[-1][1] if self.parity_sups else 0.0


def constant_potential_table(depth, u):
    """Table with every value = u; closed-form eigenvalue e^{beta u} phi."""
    vals = {w[::-1]: float(u) for w in admissible_words(depth)}
    return PotentialTable(depth, vals, (), ())


def estimate_potential(break_map, depth, base=None, cf=None, coding=None):
    """Depth-`depth` potential table from partition geometry.

    Value keyed by reversed word: log(|I(w)| / |I(parent(w))|) where I(w)
    is the element labeled by the forward word w. Carried elements (w
    ending in 'a') equal their parent, so their value must come out as an
    exact 0.0; anything else there, or a non-negative value on a split
    child, means the partitions have degraded. Requires depth >= 2."""
    if depth < 2:
        raise ConfigError("potential tables start at depth 2")
    if coding is None:
        coding = SymbolicCoding(break_map, depth, base=base, cf=cf)
    tables = {}
    for d in range(2, depth + 1):
        lvl = coding.level_of_depth(d)
        part = coding.hierarchy.level(lvl)
        parent_part = coding.hierarchy.level(lvl - 1)
        lens = np.asarray(part.lengths(), dtype=float)
        plens = np.asarray(parent_part.lengths(), dtype=float)
        vals = {}
        for j in range(len(part)):
            w = coding.word_of(d, j)
            pj = coding.hierarchy.parent_slot(lvl, j)
            u = math.log(lens[j] / plens[pj])
            if w[-1] == "a":
                if u != 0.0:
                    raise PrecisionExhausted(
                        f"carried element {w} drifted from its parent (u={u})"
                    )
            elif u >= 0.0:
                raise PrecisionExhausted(
                    f"non-negative potential value {u} for split child {w}"
                )
            vals[w[::-1]] = u
        tables[d] = vals
    parity = []
    for d in range(3, depth + 1):
        prev = tables[d - 1]
        parity.append((d, max(abs(u - prev[rev[:-1]])
                              for rev, u in tables[d].items())))
    cauchy = []
    for d in range(4, depth + 1):
        prev = tables[d - 2]
        cauchy.append((d, max(abs(u - prev[rev[:-2]])
                              for rev, u in tables[d].items())))
    return PotentialTable(depth, tables[depth], tuple(cauchy), tuple(parity))


# -- transfer-operator eigenvalue, route 1: cylinder sums -------------------------


@dataclass
class EigenvalueEstimate:
    beta: float
    depth: int
    value: float
    method: str
    residual: float
    iterations: int
    sequence: tuple = ()

    def to_row(self):
        return {
            "beta": self.beta,
            "depth": self.depth,
            "lambda": self.value,
            "method": self.method,
            "residual": self.residual,
        }


def _dp_states(depth):
    """Reversed (depth-1)-words as DP states, with successor bookkeeping.

    A state holds the most recent depth-1 symbols, newest first. Appending
    a forward symbol c (admissible after the newest symbol state[0]) moves
    to state (c + state)[:depth-1] with weight key (c + state)."""
    states = [w[::-1] for w in admissible_words(depth - 1)]
    index = {s: i for i, s in enumerate(states)}
    moves = []  # per state: list of (next_state_index, full_key)
    for s in states:
        out = []
        for c in SUCC[s[0]]:
            full = c + s
            out.append((index[full[:-1]], full))
        moves.append(out)
    return states, index, moves


def ruelle_sequence(table, beta, n_max=96):
    """ln Z_n for n = depth..n_max, where Z_n is the cylinder sum

        Z_n = sum over admissible forward words of length n of
              exp(beta * sum_s U(reversed s-prefix, tail-padded)).

    Computed by sliding-window dynamic programming with per-step rescaling.
    """
    k = table.depth
    if n_max < k + 4:
        raise ConfigError("n_max too small for a meaningful limit")
    states, index, moves = _dp_states(k)
    # seed: all admissible forward prefixes of length k-1, with their padded
    # per-position weights accumulated in log space (plain exp would overflow
    # for large |beta|)
    logs = np.full(len(states), -np.inf)
    for w in admissible_words(k - 1):
        acc = 0.0
        for s in range(1, k):
            acc += table.values[pad_reversed(w[:s][::-1], k)]
        i = index[w[::-1]]
        val = beta * acc
        logs[i] = val if logs[i] == -np.inf else np.logaddexp(logs[i], val)
    shift = float(np.max(logs))
    vec = np.exp(logs - shift)
    scale = shift
    out = []
    n = k - 1
    while n < n_max:
        n += 1
        new = np.zeros_like(vec)
        for i, v in enumerate(vec):
            if v == 0.0:
                continue
            for j, key in moves[i]:
                new[j] += v * math.exp(beta * table.values[key])
        m = float(np.max(new))
        if m <= 0.0 or not math.isfinite(m):
            raise PrecisionExhausted(f"cylinder sum degenerated at n={n}")
        vec = new / m
        scale += math.log(m)
        out.append((n, scale + math.log(float(np.sum(vec)))))
    return out


def eigenvalue_ruelle(table, beta, n_max=96):
    """Leading-eigenvalue estimate from the cylinder-sum limit.

    The raw sequence (1/n) ln Z_n converges like O(1/n); the first
    differences ln Z_n - ln Z_{n-1} converge geometrically, and one
    delta-squared pass on them gives the quoted value."""
    seq = ruelle_sequence(table, beta, n_max=n_max)
    lnz = [v for _, v in seq]
    diffs = [b - a for a, b in zip(lnz, lnz[1:])]
    acc = aitken(diffs)
    if len(acc) < 2:
        raise ConfigError("sequence too short after acceleration")
    value = math.exp(acc[-1])
    residual = abs(math.exp(acc[-2]) - value)
    return EigenvalueEstimate(
        beta=float(beta),
        depth=table.depth,
        value=value,
        method="cylinder-sum",
        residual=residual,
        iterations=len(lnz),
        sequence=tuple(math.exp(d) for d in diffs[-8:]),
    )


# -- transfer-operator eigenvalue, route 2: power iteration ------------------------


def transfer_matrix(table, beta):
    """Dense matrix of the transfer operator on depth-(k-1) cylinders.

    Row = target state, column = source state; entry exp(beta * U(key))
    where key is the length-k window formed by the prepended symbol."""
    k = table.depth
    states, index, moves = _dp_states(k)
    m = np.zeros((len(states), len(states)))
    for i, out in enumerate(moves):
        for j, key in out:
            m[j, i] += math.exp(beta * table.values[key])
    return states, m


def eigenvalue_power(table, beta, tol=1e-12, max_iter=50_000):
    """Dominant eigenvalue of the discretized transfer operator by power
    iteration; stops when successive Rayleigh quotients differ by < tol.
    Raises NoConvergence if max_iter passes without that happening."""
    states, m = transfer_matrix(table, beta)
    v = np.full(len(states), 1.0 / len(states))
    lam_prev = None
    for it in range(1, max_iter + 1):
        w = m @ v
        norm = float(np.sum(w))
        if norm <= 0.0 or not math.isfinite(norm):
            raise NoConvergence(f"iteration degenerated at step {it}")
        w /= norm
        lam = float(w @ (m @ w) / (w @ w))
        if lam_prev is not None and abs(lam - lam_prev) < tol * max(1.0, lam):
            if np.any(w <= 0.0):
                raise PrecisionExhausted("eigenfunction lost strict positivity")
            resid = float(np.max(np.abs(m @ w - lam * w)))
            est = EigenvalueEstimate(
                beta=float(beta),
                depth=table.depth,
                value=lam,
                method="power-iteration",
                residual=resid,
                iterations=it,
            )
            est.eigenfunction = {s: float(x) for s, x in zip(states, w)}
            return est
        lam_prev = lam
        v = w
    raise NoConvergence(f"no eigenvalue convergence after {max_iter} iterations")


def eigenvalue_lengths(coding, beta, depth=None):
    """Parity-free reference eigenvalue from raw partition lengths.

    With Z_d = sum over depth-d elements of |I|^beta, the estimate is
    sqrt(Z_d / Z_{d-2}) at the deepest available d. This needs no potential
    table and no padding, so it is immune to the 2-cycle parity; the
    residual is the spread against the estimate one level shallower. At
    beta = 1 the value is exactly 1 (each level tiles the circle); at
    beta = 0 it is the golden mean (pure element counting)."""
    if depth is None:
        depth = coding.max_depth
    if depth < 4 or depth > coding.max_depth:
        raise ConfigError("need 4 <= depth <= coding.max_depth")

    def z(d):
        lens = np.asarray(coding.partition_at_depth(d).lengths(), dtype=float)
        return float(np.sum(lens**beta))

    val = math.sqrt(z(depth) / z(depth - 2))
    prev = math.sqrt(z(depth - 1) / z(depth - 3))
    return EigenvalueEstimate(
        beta=float(beta),
        depth=depth,
        value=val,
        method="length-sums",
        residual=abs(val - prev),
        iterations=0,
    )


# -- derived checks ------------------------------------------------------------------


def eigenvalue_inequality_check(break_map, delta, beta, depth=10, cf=None,
                                coding=None):
    """Check lambda_{-beta}^delta < lambda_{-delta}^beta for 1 <= delta < beta.

    Eigenvalues are estimated at `depth` and depth-2; the depth sensitivity
    is used as an error bar on each side. Raises
    InconclusiveWithinErrorBars when the bars overlap."""
    if not 1 <= delta < beta:
        raise ConfigError("need 1 <= delta < beta")
    if coding is None:
        coding = SymbolicCoding(break_map, depth, cf=cf)
    vals = {}
    for k in (depth, depth - 2):
        table = estimate_potential(break_map, k, coding=coding if k == depth else None,
                                   cf=coding.cf)
        for b in (-float(beta), -float(delta)):
            vals[(k, b)] = eigenvalue_power(table, b).value
    lam_mb = vals[(depth, -float(beta))]
    lam_md = vals[(depth, -float(delta))]
    err_mb = abs(lam_mb - vals[(depth - 2, -float(beta))])
    err_md = abs(lam_md - vals[(depth - 2, -float(delta))])
    lhs = lam_mb**delta
    rhs = lam_md**beta
    lhs_hi = (lam_mb + err_mb) ** delta
    rhs_lo = max(lam_md - err_md, 0.0) ** beta
    if lhs < rhs and lhs_hi < rhs_lo:
        return True, lhs, rhs, (lhs_hi, rhs_lo)
    if lhs >= rhs and (lam_mb - err_mb) ** delta >= (lam_md + err_md) ** beta:
        return False, lhs, rhs, (lhs_hi, rhs_lo)
    raise InconclusiveWithinErrorBars(
        f"lambda inequality undecided: lhs={lhs:.6g}+-{lhs_hi - lhs:.2g}, "
        f"rhs={rhs:.6g}-+{rhs - rhs_lo:.2g}"
    )


def reconstruction_check(coding, table, word, r, table_alt=None):
    """Compare an element length against its reconstruction from the
    potential: |I(word)| vs |I(word[:r])| * exp(sum of tail-padded lookups
    along the descent). Returns (actual_ratio, reconstructed, rel_err).

    With only `table`, every step is looked up at that table's depth
    parity; for break maps the wrong-parity steps carry an O(2-cycle
    amplitude) error that does not vanish as r grows. Passing a second
    table of adjacent depth as `table_alt` routes each step through the
    parity-matching table, restoring the geometric decay in r."""
    n = len(word)
    if not 1 <= r < n:
        raise ConfigError("need 1 <= r < len(word)")
    if table_alt is not None and (table_alt.depth - table.depth) % 2 == 0:
        raise ConfigError("table_alt must have the opposite depth parity")
    i_n = coding.element_of_word(word).length
    i_r = coding.element_of_word(word[:r]).length
    actual = i_n / i_r
    acc = 0.0
    for d in range(r + 1, n + 1):
        t = table
        if table_alt is not None and (d - table.depth) % 2 != 0:
            t = table_alt
        acc += t.lookup(word[:d][::-1])
    reconstructed = math.exp(acc)
    rel_err = abs(reconstructed / actual - 1.0)
    return actual, reconstructed, rel_err
