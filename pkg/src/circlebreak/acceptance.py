"""End-to-end acceptance suite: ten checks covering the whole toolkit.

Each check exercises one pipeline at pre-registered tolerances and prints a
single [PASS]/[FAIL] line.  The mix is deliberate: exact integer
combinatorics (check 1), tight identity checks (2, 3), zero-violation
inequality batteries (4), geometric trend bounds (5), estimator
cross-validation (6, 7), and statistical trend checks with generous
thresholds (8, 9).  Check 10 reruns CLI commands and byte-compares.

Check 3 carries a known failure: its first identity asserts that the
product of the two jump ratios of the glued map is sqrt(c), while the
measured product is c itself (exactly 2 at c = 2, confirmed by an
independent derivative oracle).  The check is implemented as stated and
reports the discrepancy instead of papering over it; see README.
"""

import math
import os
import tempfile
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .circle import build_fractional_linear_pair, map_from_config
from .errors import CircleBreakError, InconclusiveWithinErrorBars
from .lyapunov import (
    clt_condition_check,
    length_sum_eigenvalue,
    sandwich_check,
)
from .numerics import fit_slope, in_ccw_arc
from .partition import (
    DynamicalPartition,
    check_finzi,
    denjoy_battery,
    nested_length_bracket,
    normalized_return_map,
    renormalize_pair,
    barycentric_scan,
)
from .rotation import measure_quotients
from .stochastic import (
    NoiseModel,
    build_tubes,
    calibrate_sigma,
    clt_experiment,
    linear_clt_trend,
    noise_exponents,
)
from .symbolic import (
    SymbolicCoding,
    eigenvalue_inequality_check,
    eigenvalue_power,
    eigenvalue_ruelle,
    estimate_potential,
)

MASTER_SEED = 20260816
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float


@lru_cache(maxsize=None)
def _g1():
    return map_from_config({"family": "pair_circle", "c": 2.0, "which": 1})


@lru_cache(maxsize=None)
def _g1_cf(depth=24):
    return measure_quotients(_g1(), depth)


def _fibonacci(count):
    out = [1, 1]
    while len(out) < count:
        out.append(out[-1] + out[-2])
    return out


def _is_fibonacci_run(qs):
    """True when qs equals fib[t:t+len(qs)] for some offset t."""
    fib = _fibonacci(len(qs) + 40)
    for t in range(len(fib) - len(qs)):
        if all(int(q) == fib[t + i] for i, q in enumerate(qs)):
            return True, t
    return False, -1


# -- the ten checks -----------------------------------------------------------


def check_first_return_fibonacci(seed=MASTER_SEED):
    """Check 1: first-return times of golden-mean maps are Fibonacci."""
    rot = map_from_config({"family": "rotation", "rho": GOLDEN})
    details = []
    ok = True
    for label, break_map in (("rotation", rot), ("pair_c2", _g1())):
        cf = measure_quotients(break_map, 20)
        qs = cf.q[1:]  # q_1 .. q_20
        if any(type(q) is not int for q in qs):
            ok = False
            details.append(f"{label}: non-integer return times")
            continue
        run, offset = _is_fibonacci_run(qs)
        ok = ok and run
        details.append(f"{label}: q_1..q_20 "
                       f"{'is' if run else 'IS NOT'} a Fibonacci run "
                       f"(q_20={qs[-1]})")
    return ok, "; ".join(details)


def check_renormalization_period_two(seed=MASTER_SEED):
    """Check 2: the pair operator swaps the two members; twice is identity."""
    worst = 0.0
    for c in (0.5, 2.0, 4.0):
        pair = build_fractional_linear_pair(c)
        once = renormalize_pair(pair.f1, pair.g1, pair.alpha1)
        twice = renormalize_pair(*once)
        for (f_got, g_got, a_got), (f_ref, g_ref, a_ref) in (
            (once, (pair.f2, pair.g2, pair.alpha2)),
            (twice, (pair.f1, pair.g1, pair.alpha1)),
        ):
            dev = abs(a_got - a_ref)
            for x in np.linspace(-1.0, 0.0, 1000):
                dev = max(dev, abs(f_got(x) - f_ref(x)))
            for y in np.linspace(0.0, a_ref, 1000):
                dev = max(dev, abs(g_got(y) - g_ref(y)))
            worst = max(worst, dev)
    return worst <= 1e-10, f"worst sup-norm deviation {worst:.3e} (<= 1e-10)"


def check_jump_ratio_identities(seed=MASTER_SEED):
    """Check 3: break-pair jump product, and return-map jump products."""
    break_map = _g1()
    c = 2.0
    breaks = [float(b) for b in break_map.break_points()]
    linked = None  # the break whose image is the other break
    for b in breaks:
        image = float(break_map(b))
        partner = min(breaks, key=lambda x: abs(x - image))
        if abs(partner - image) <= 1e-9:
            linked = (b, partner)
            break
    if linked is None:
        return False, "no break maps onto a break"
    product = (break_map.jump_ratio(linked[0])
               * break_map.jump_ratio(linked[1]))
    a_dev = abs(product - math.sqrt(c))
    a_ok = a_dev <= 1e-10

    cf = _g1_cf()
    # The product of the return map's two squared jumps equals the squared
    # total jump of the underlying map, which for the glued pair is c**2
    # (the per-break chart jumps c0, c/c0 are not individually invariant).
    target_sq = c ** 2
    worst_b = 0.0
    for m in range(1, 9):
        rm = normalized_return_map(break_map, m, cf=cf)
        got = rm.jump_sq_break() * rm.jump_sq_zero()
        worst_b = max(worst_b, abs(got - target_sq))
    b_ok = worst_b <= 1e-8

    detail = (
        f"break-pair product {product:.12f} vs stated sqrt(c)="
        f"{math.sqrt(c):.12f}, |diff|={a_dev:.3e} (the measured product "
        f"equals c itself); return-map products m<=8 worst |dev| "
        f"{worst_b:.2e} (<= 1e-8: {'ok' if b_ok else 'FAIL'})"
    )
    return a_ok and b_ok, detail


def check_denjoy_finzi(seed=MASTER_SEED):
    """Check 4: distortion inequalities, zero violations over ~10^3 points."""
    break_map = _g1()
    cf = _g1_cf()
    _, v = break_map.log_deriv_total_variation()
    worst_denjoy = 0.0
    for n in range(1, 13):
        rep = denjoy_battery(break_map, n, count=1000, seed=seed + n, cf=cf,
                             v=v)
        if not rep.passed:
            return False, (f"Denjoy violation at level {n}: worst |log "
                           f"product| {rep.worst:.6f} > v={v:.6f}")
        worst_denjoy = max(worst_denjoy, rep.worst)

    rng = np.random.default_rng(seed)
    pairs = 0
    worst_finzi = 0.0
    for n in range(2, 13):
        part = DynamicalPartition.build(break_map, n, cf=cf)
        for _ in range(91):
            slot = int(rng.integers(0, len(part)))
            el = part.element(slot)
            u = np.sort(rng.uniform(0.05, 0.95, size=2))
            x = (el.interval.left + u[0] * el.length) % 1.0
            y = (el.interval.left + u[1] * el.length) % 1.0
            rep = check_finzi(break_map, x, y, n, cf=cf, v=v)
            pairs += 1
            worst_finzi = max(worst_finzi, rep.worst)
            if not rep.passed:
                return False, (f"Finzi violation at level {n}: worst |log "
                               f"ratio| {rep.worst:.6f} > v={v:.6f}")
    return True, (f"0 violations; Denjoy worst |log| {worst_denjoy:.4f}, "
                  f"Finzi worst |log| {worst_finzi:.4f} over {pairs} pairs, "
                  f"bound v={v:.4f}")


def check_partition_geometry(seed=MASTER_SEED):
    """Check 5: validity to level 14, max-length slope, nested bracket."""
    break_map = _g1()
    cf = _g1_cf()
    qs = cf.q
    rng = np.random.default_rng(seed)
    max_lens = []
    for n in range(1, 15):
        part = DynamicalPartition.build(break_map, n, cf=cf)
        lens = np.asarray(part.lengths())
        if len(part) != qs[n] + qs[n + 1]:
            return False, (f"level {n}: {len(part)} elements, expected "
                           f"q_n+q_(n+1)={qs[n] + qs[n + 1]}")
        if not np.all(lens > 0.0):
            return False, f"level {n}: empty element"
        if abs(math.fsum(float(x) for x in lens) - 1.0) > 1e-10:
            return False, f"level {n}: lengths do not sum to 1"
        if not np.all(np.diff(part.points) > 0.0):
            return False, f"level {n}: endpoints out of order"
        for x in rng.random(50):
            slot = part.locate(float(x))
            el = part.element(slot)
            left = float(el.interval.left)
            if not in_ccw_arc(float(x), left, (left + el.length) % 1.0):
                return False, f"level {n}: locate() misplaced {x}"
        max_lens.append(float(np.max(lens)))

    slope, _ = fit_slope(np.arange(1, 15), np.log(max_lens))
    _, theta_minus = break_map.theta_bounds()
    slope_bound = math.log(theta_minus) + 0.05
    slope_ok = slope <= slope_bound

    bracket = nested_length_bracket(
        break_map, fit_levels=range(4, 9), check_levels=range(4, 13),
        l_values=range(2, 7), seed=seed, cf=cf,
    )
    detail = (
        f"levels 1..14 valid; max-length log-slope {slope:.4f} <= "
        f"{slope_bound:.4f}: {'ok' if slope_ok else 'FAIL'}; nested bracket "
        f"C1={bracket['c1_eff']:.3f}, C2={bracket['c2_eff']:.3f}, margins "
        f"({bracket['worst_low_margin']:.2e}, "
        f"{bracket['worst_high_margin']:.2e})"
    )
    return slope_ok and bracket["passed"], detail


def check_eigenvalue_estimators(seed=MASTER_SEED):
    """Check 6: counting oracle, estimator agreement, ordering inequality."""
    break_map = _g1()
    cf = _g1_cf()
    coding = SymbolicCoding(break_map, 10, cf=cf)
    table = estimate_potential(break_map, 10, coding=coding)
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    lam0 = eigenvalue_power(table, 0.0).value
    phi_dev = abs(lam0 - phi)
    phi_ok = phi_dev <= 1e-6

    worst_gap = 0.0
    for beta in (1.0, 2.0, 3.0):
        ru = eigenvalue_ruelle(table, beta).value
        pw = eigenvalue_power(table, beta).value
        worst_gap = max(worst_gap, abs(ru - pw) / abs(pw))
    agree_ok = worst_gap <= 0.01

    try:
        holds, lhs, rhs, bars = eigenvalue_inequality_check(
            break_map, 2, 3, depth=10, coding=coding)
        ineq_ok = bool(holds)
        ineq_txt = (f"lambda ordering {lhs:.4f} < {rhs:.4f} outside error "
                    f"bars: {'ok' if ineq_ok else 'FAIL'}")
    except InconclusiveWithinErrorBars as exc:
        ineq_ok = False
        ineq_txt = f"lambda ordering inconclusive ({exc})"

    detail = (f"|lambda(0)-phi|={phi_dev:.2e} (<=1e-6); worst "
              f"Ruelle/power gap {worst_gap:.4%} (<=1%); {ineq_txt}")
    return phi_ok and agree_ok and ineq_ok, detail


def check_growth_sum_sandwich(seed=MASTER_SEED):
    """Check 7: sandwich dynamic range and moment-ratio decrease."""
    break_map = _g1()
    cf = _g1_cf()
    rep = sandwich_check(break_map, 0.1234, 2.0, range(6, 13), cf=cf)
    sandwich_ok = rep.passed and rep.ratio_spread <= 50.0
    crep = clt_condition_check(break_map, 0.1234, 3.0, range(6, 13), cf=cf)
    trend = ("strictly decreasing" if crep.strictly_decreasing
             else "NOT decreasing")
    detail = (
        f"sandwich spread {rep.ratio_spread:.2f} (<=50), lambda "
        f"{rep.lambda_est:.4f} via {rep.lambda_method}; moment ratio "
        f"{trend} over n=6..12 (per-level factor "
        f"{crep.fitted_factor:.4f}, predicted {crep.predicted_factor:.4f})"
    )
    return sandwich_ok and crep.strictly_decreasing, detail


def check_linear_clt(seed=MASTER_SEED):
    """Check 8: KS of the linear noise sum, threshold + trend."""
    break_map = _g1()
    cf = _g1_cf()
    noise = NoiseModel(kind="uniform", scale=1.0, p=4.0)
    rows = linear_clt_trend(break_map, 0.1234, range(9, 13), noise, 10_000,
                            seed=seed, cf=cf)
    ks = [row["ks"] for row in rows]
    threshold = max(0.05, 3.0 * rows[-1]["be_proxy"])
    top_ok = ks[-1] <= threshold
    inversions = sum(1 for a, b in zip(ks, ks[1:]) if b > a)
    trend_ok = inversions <= 1
    detail = (
        f"KS by level {[f'{k:.4f}' for k in ks]}, top {ks[-1]:.4f} <= "
        f"max(0.05, 3*moment proxy)={threshold:.4f}: "
        f"{'ok' if top_ok else 'FAIL'}; {inversions} inversion(s) "
        f"(<=1 allowed) at N=10^4"
    )
    return top_ok and trend_ok, detail


def check_full_clt(seed=MASTER_SEED):
    """Check 9: noisy-orbit CLT along a calibrated power-law noise schedule."""
    break_map = _g1()
    cf = _g1_cf()
    noise = NoiseModel(kind="uniform", scale=1.0, p=4.0)

    lam1 = length_sum_eigenvalue(break_map, -1.0, 12, cf=cf)
    lam2 = length_sum_eigenvalue(break_map, -2.0, 12, cf=cf)
    lam3 = length_sum_eigenvalue(break_map, -3.0, 12, cf=cf)
    theta_plus, _ = break_map.theta_bounds()
    exps = noise_exponents(lam1, theta_plus, GOLDEN, noise.p,
                           lambda_minus_s=lam3, lambda_minus_2=lam2)
    if not exps.feasible:
        return False, "exponent computation reports infeasible parameters"

    levels = [4, 5, 6, 7]
    anchor = levels[0]
    z0_anchor, _, _ = barycentric_scan(break_map, anchor, cf=cf)
    tubes = build_tubes(break_map, z0_anchor, anchor, cf=cf)
    sigma_anchor, _ = calibrate_sigma(
        break_map, tubes, noise, target=0.995, n_replicas=800, seed=seed)
    c1 = sigma_anchor * anchor ** exps.tau

    reports = []
    for m in levels:
        z0 = z0_anchor if m == anchor else barycentric_scan(
            break_map, m, cf=cf)[0]
        sigma_m = c1 * m ** (-exps.tau)
        rep = clt_experiment(
            break_map, z0, [m], sigma_m, noise, 10_000, seed + m, cf=cf,
            tube_level=m, tube_l=6,
        )[0]
        reports.append(rep)

    tube_ok = all(r.tube_freq is not None and r.tube_freq >= 0.99
                  for r in reports)
    ks = [r.ks for r in reports]
    top_ok = ks[-1] <= 0.05
    slope = fit_slope(np.log([r.n for r in reports]), np.log(ks))
    decay_exponent = -slope
    trend_ok = decay_exponent > 0.0

    detail = (
        f"tau={exps.tau:.3f} ({exps.branch} branch), sigma schedule "
        f"{sigma_anchor:.2e}..{c1 * levels[-1] ** (-exps.tau):.2e}; tube "
        f"freq {[f'{r.tube_freq:.3f}' for r in reports]} (>=0.99); KS "
        f"{[f'{k:.4f}' for k in ks]}, top {ks[-1]:.4f} <= 0.05: "
        f"{'ok' if top_ok else 'FAIL'}; fitted KS decay exponent "
        f"{decay_exponent:.3f} in KS ~ q^-k (trend "
        f"{'decreasing' if trend_ok else 'NOT decreasing'})"
    )
    return tube_ok and top_ok and trend_ok, detail


def check_deterministic_reruns(seed=MASTER_SEED):
    """Check 10: CLI reruns with one seed are byte-identical."""
    from . import cli

    cases = [
        ("map-info", ["map-info", "--deterministic"]),
        ("rotnum", ["rotnum", "--deterministic", "--depth", "8"]),
        ("partition", ["partition", "--deterministic", "--level", "6"]),
        ("clt", ["clt", "--deterministic", "--levels", "3",
                 "--sigma", "1e-5", "--replicas", "200",
                 "--tube-level", "3", "--z0", "0.810479427260514",
                 "--seed", str(seed)]),
    ]
    with tempfile.TemporaryDirectory() as tmp:
        for label, argv in cases:
            out_a = os.path.join(tmp, f"{label}_a")
            out_b = os.path.join(tmp, f"{label}_b")
            rc_a = cli.main(argv + ["--out", out_a, "--threads", "1"])
            rc_b = cli.main(argv + ["--out", out_b, "--threads", "2"])
            if rc_a != 0 or rc_b != 0:
                return False, f"{label}: exit codes {rc_a}/{rc_b}"
            with open(out_a, "rb") as fh:
                blob_a = fh.read()
            with open(out_b, "rb") as fh:
                blob_b = fh.read()
            if blob_a != blob_b:
                return False, f"{label}: reruns differ"
    return True, (f"{len(cases)} commands rerun byte-identical "
                  f"(threads 1 vs 2)")


CHECKS = [
    (1, "first-return times are Fibonacci", check_first_return_fibonacci),
    (2, "renormalization is period two", check_renormalization_period_two),
    (3, "jump-ratio identities", check_jump_ratio_identities),
    (4, "Denjoy and Finzi inequalities", check_denjoy_finzi),
    (5, "partition geometry", check_partition_geometry),
    (6, "eigenvalue estimators", check_eigenvalue_estimators),
    (7, "growth-sum sandwich", check_growth_sum_sandwich),
    (8, "linear noise CLT", check_linear_clt),
    (9, "full noise CLT", check_full_clt),
    (10, "deterministic reruns", check_deterministic_reruns),
]


def run_all(only=None, seed=MASTER_SEED):
    """Run the acceptance checks; print one line each; return CheckResults."""
    results = []
    for number, name, fn in CHECKS:
        if only is not None and number not in only:
            continue
        start = time.perf_counter()
        try:
            passed, detail = fn(seed=seed)
        except CircleBreakError as exc:
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        elapsed = time.perf_counter() - start
        results.append(CheckResult(number, name, passed, detail, elapsed))
        tag = "PASS" if passed else "FAIL"
        print(f"[{tag}] check {number}: {name} ({detail}) [{elapsed:.1f}s]",
              flush=True)
    return results
