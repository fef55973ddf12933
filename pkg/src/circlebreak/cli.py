"""Command-line front end.

Every command is a pure function of (config, seed): identical inputs give
identical output files, except for a generated_at timestamp line that
--deterministic removes.  Tables are CSV with `# key=value` comment
headers, reports are JSON; both carry a schema_version field.

Subcommands: map-info, rotnum, partition, thermo, lyapunov, barycentric,
clt, check.  Exit codes: 0 ok, 1 a --check / check-suite failure,
2 configuration error.

A config file (--config, JSON) supplies defaults; flags override it.  The
map section uses the same dict format as map_from_config / to_config,
e.g. {"map": {"family": "pair_circle", "c": 2.0, "which": 1}}.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
from datetime import datetime, timezone

from .circle import map_from_config
from .errors import CircleBreakError, ConfigError
from .partition import (
    DynamicalPartition,
    TwoSidedPartition,
    barycentric_scan,
)
from .rotation import measure_quotients, rotation_number
from .stochastic import NoiseModel, clt_experiment, resolve_sigma
from .symbolic import (
    estimate_potential,
    eigenvalue_power,
    eigenvalue_ruelle,
)
from .lyapunov import sandwich_check

SCHEMA_VERSION = 1
DEFAULT_SEED = 20260816

_POTENTIAL_KEY_NOTE = (
    "Potential CSV keys are reversed symbol words: the first character is "
    "the most recent symbol, so a key reads backward along the orbit.  "
    "Values are log length ratios, exactly 0.0 on carried elements "
    "(reversed words starting with 'a') and strictly negative otherwise."
)


# -- plumbing -----------------------------------------------------------------


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    return cfg


def _build_map(args, cfg):
    spec = dict(cfg.get("map", {}))
    family = getattr(args, "family", None)
    if family == "rotation":
        if args.rho is None:
            raise ConfigError("--family rotation needs --rho")
        spec = {"family": "rotation", "rho": args.rho}
    elif family == "pair":
        spec = {"family": "pair_circle",
                "c": 2.0 if args.c is None else args.c,
                "which": args.which or 1}
    elif family == "exp":
        if args.kappa is None or args.offset is None:
            raise ConfigError("--family exp needs --kappa and --offset")
        spec = {"family": "exp_break", "kappa": args.kappa,
                "offset": args.offset}
    if not spec:
        spec = {"family": "pair_circle", "c": 2.0, "which": 1}
    if getattr(args, "dps", None):
        spec["dps"] = args.dps
    return map_from_config(spec)


def _parse_levels(text):
    """'4:12' (inclusive) or '4,6,9' -> sorted ints."""
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ConfigError(f"empty level range {text!r}")
        return list(range(lo, hi + 1))
    return sorted({int(t) for t in text.split(",") if t.strip()})


def _parse_floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _write(args, text):
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv_text(args, comments, fieldnames, rows):
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    if not args.deterministic:
        stamp = datetime.now(timezone.utc).isoformat()
        buf.write(f"# generated_at={stamp}\n")
    for key, value in comments:
        buf.write(f"# {key}={value}\n")
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _json_text(args, payload):
    out = {"schema_version": SCHEMA_VERSION}
    if not args.deterministic:
        out["generated_at"] = datetime.now(timezone.utc).isoformat()
    out.update(payload)
    return json.dumps(out, sort_keys=True, indent=2) + "\n"


def _noise_from_args(args, cfg):
    spec = dict(cfg.get("noise", {}))
    if args.noise is not None:
        spec["kind"] = args.noise
    if args.scale is not None:
        spec["scale"] = args.scale
    if args.p is not None:
        spec["p"] = args.p
    if args.trunc is not None:
        spec["trunc"] = args.trunc
    spec.setdefault("kind", "uniform")
    spec.setdefault("scale", 1.0)
    spec.setdefault("p", 4.0)
    spec.setdefault("trunc", 3.0)
    return NoiseModel(**spec)


# -- subcommands --------------------------------------------------------------


def cmd_map_info(args, cfg):
    break_map = _build_map(args, cfg)
    breaks = [float(b) for b in break_map.break_points()]
    jumps = {repr(b): float(break_map.jump_ratio(b)) for b in breaks}
    product = 1.0
    for v in jumps.values():
        product *= v
    lo, hi = break_map.derivative_bounds()
    v_bar, v = break_map.log_deriv_total_variation()
    tp, tm = break_map.theta_bounds()
    _write(args, _json_text(args, {
        "map": break_map.to_config(),
        "break_points": breaks,
        "jump_ratios": jumps,
        "jump_product": product,
        "derivative_bounds": [float(lo), float(hi)],
        "v_bar": float(v_bar),
        "v": float(v),
        "theta_plus": float(tp),
        "theta_minus": float(tm),
    }))
    return 0


def cmd_rotnum(args, cfg):
    break_map = _build_map(args, cfg)
    if args.depth:
        cf = measure_quotients(break_map, args.depth)
        rows = [
            {"n": n, "k_n": k, "p_n": p, "q_n": q,
             "convergent": repr(p / q)}
            for n, (k, p, q) in enumerate(
                zip(cf.quotients, cf.p[1:], cf.q[1:]), start=1)
        ]
        comments = [
            ("depth", len(cf.quotients)),
            ("quotients", " ".join(str(k) for k in cf.quotients)),
            ("rho", repr(cf.value())),
        ]
        fields = ["n", "k_n", "p_n", "q_n", "convergent"]
    else:
        est = rotation_number(break_map, tol=args.tol)
        rows = [
            {"n": n, "k_n": k, "p_n": p, "q_n": q, "convergent": repr(conv),
             "error_bound": repr(err)}
            for n, k, p, q, conv, err in est.rows()
        ]
        comments = [
            ("rho", repr(est.value)),
            ("error", repr(est.error)),
            ("iterations", est.iterations),
            ("exact", est.exact),
        ]
        fields = ["n", "k_n", "p_n", "q_n", "convergent", "error_bound"]
    _write(args, _csv_text(args, comments, fields, rows))
    return 0


def cmd_partition(args, cfg):
    break_map = _build_map(args, cfg)
    cls = TwoSidedPartition if args.two_sided else DynamicalPartition
    part = cls.build(break_map, args.level, base=args.base)
    rows = [
        {"slot": slot, "generation": gen, "orbit_index": idx,
         "left": repr(left), "length": repr(length)}
        for slot, gen, idx, left, length in part.rows()
    ]
    lens = [float(x) for x in part.lengths()]
    comments = [
        ("level", part.level),
        ("q_n", part.q[0]),
        ("q_next", part.q[1]),
        ("count", len(part)),
        ("total_length", repr(math.fsum(lens))),
        ("min_length", repr(min(lens))),
        ("max_length", repr(max(lens))),
        ("validity", "ok"),  # build() rejects invalid partitions
    ]
    _write(args, _csv_text(
        args, comments,
        ["slot", "generation", "orbit_index", "left", "length"], rows,
    ))
    return 0


def cmd_thermo(args, cfg):
    break_map = _build_map(args, cfg)
    table = estimate_potential(break_map, args.depth)
    if args.potential:
        rows = [
            {"reversed_word": key, "value": repr(val)}
            for key, val in sorted(table.values.items())
        ]
        comments = [
            ("depth", table.depth),
            ("key_convention", "reversed (newest symbol first)"),
            ("parity_amplitude", repr(table.parity_amplitude())),
        ]
        _write(args, _csv_text(args, comments,
                               ["reversed_word", "value"], rows))
        return 0
    betas = _parse_floats(args.betas)
    rows = []
    for beta in betas:
        ru = eigenvalue_ruelle(table, beta)
        pw = eigenvalue_power(table, beta)
        gap = abs(ru.value - pw.value) / max(abs(pw.value), 1e-300)
        rows.append({
            "beta": beta,
            "lambda_ruelle": repr(ru.value),
            "residual_ruelle": repr(ru.residual),
            "lambda_power": repr(pw.value),
            "residual_power": repr(pw.residual),
            "relative_gap": repr(gap),
        })
    comments = [
        ("depth", table.depth),
        ("parity_amplitude", repr(table.parity_amplitude())),
        ("note", "eigenvalues at +beta weight short cylinders up"),
    ]
    _write(args, _csv_text(
        args, comments,
        ["beta", "lambda_ruelle", "residual_ruelle", "lambda_power",
         "residual_power", "relative_gap"], rows,
    ))
    return 0


def cmd_lyapunov(args, cfg):
    break_map = _build_map(args, cfg)
    levels = _parse_levels(args.levels)
    report = sandwich_check(break_map, args.z0, args.beta, levels)
    rows = [
        {key: repr(val) if isinstance(val, float) else val
         for key, val in row.items()}
        for row in report.to_rows()
    ]
    fields = list(rows[0].keys()) if rows else []
    comments = [
        ("z0", repr(report.z0)),
        ("beta", repr(report.beta)),
        ("lambda_est", repr(report.lambda_est)),
        ("lambda_method", report.lambda_method),
        ("ratio_spread", repr(report.ratio_spread)),
        ("ratio_bound", repr(report.ratio_bound)),
        ("stabilization_level", report.stabilization_level),
        ("passed", report.passed),
    ]
    _write(args, _csv_text(args, comments, fields, rows))
    return 0


def cmd_barycentric(args, cfg):
    break_map = _build_map(args, cfg)
    candidates = None
    if args.count != 40:
        from .numerics import wrap
        g = (math.sqrt(5) - 1) / 2
        candidates = [wrap(0.1234567 + g * j * 0.61)
                      for j in range(args.count)]
    best, score, rows = barycentric_scan(
        break_map, args.level, candidates=candidates,
        min_kappa=args.min_kappa,
    )
    out_rows = [
        {"z0": repr(z), "score": repr(s), "occupancy_ok": ok}
        for z, s, ok in rows
    ]
    comments = [
        ("level", args.level),
        ("best_z0", repr(best)),
        ("best_score", repr(score)),
    ]
    _write(args, _csv_text(args, comments,
                           ["z0", "score", "occupancy_ok"], out_rows))
    return 0


def cmd_clt(args, cfg):
    break_map = _build_map(args, cfg)
    noise = _noise_from_args(args, cfg)
    levels = _parse_levels(args.levels)
    if args.sigma is not None:
        schedule = args.sigma
    elif args.sigma_c1 is not None and args.sigma_tau is not None:
        schedule = {"c1": args.sigma_c1, "tau": args.sigma_tau}
    elif "sigma_schedule" in cfg:
        raw = cfg["sigma_schedule"]
        schedule = ({int(k): float(v) for k, v in raw.items()}
                    if isinstance(raw, dict) and "c1" not in raw else raw)
    else:
        raise ConfigError(
            "no noise level: pass --sigma, or --sigma-c1 with --sigma-tau"
        )
    reports = clt_experiment(
        break_map, args.z0, levels, schedule, noise, args.replicas,
        args.seed, tube_level=args.tube_level, tube_l=args.tube_l,
        threads=args.threads,
    )
    rows = []
    for rep in reports:
        row = rep.to_row()
        rows.append({
            key: (repr(val) if isinstance(val, float) else val)
            for key, val in row.items()
        })
    comments = [
        ("map", json.dumps(break_map.to_config(), sort_keys=True)),
        ("noise", json.dumps(noise.to_config(), sort_keys=True)),
        ("replicas", args.replicas),
        ("seed", args.seed),
        ("z0", repr(args.z0)),
    ]
    fields = list(rows[0].keys())
    _write(args, _csv_text(args, comments, fields, rows))
    if args.check:
        top = reports[-1]
        ok = top.ks <= args.ks_threshold
        for rep in reports:
            if rep.tube_freq is not None and rep.tube_freq < args.tube_threshold:
                ok = False
        if not ok:
            print(
                f"check failed: ks={top.ks:.4f} at level {top.m} "
                f"(threshold {args.ks_threshold}) or tube frequency below "
                f"{args.tube_threshold}", file=sys.stderr,
            )
            return 1
    return 0


def cmd_check(args, cfg):
    from .acceptance import run_all
    only = None
    if args.only:
        only = [int(t) for t in args.only.split(",") if t.strip()]
    results = run_all(only=only, seed=args.seed)
    return 0 if all(r.passed for r in results) else 1


# -- parser -------------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", help="JSON config file; flags override it")
    sub.add_argument("--out", help="output path (default stdout)")
    sub.add_argument("--seed", type=int, default=DEFAULT_SEED,
                     help="master seed (default %(default)s)")
    sub.add_argument("--deterministic", action="store_true",
                     help="omit the generated_at timestamp so reruns are "
                          "byte-identical")
    sub.add_argument("--threads", type=int,
                     default=int(os.environ.get("CIRCLEBREAK_THREADS", "1")),
                     help="worker threads for replica generation; results "
                          "do not depend on this")


def _add_map_flags(sub):
    sub.add_argument("--family", choices=["rotation", "pair", "exp"],
                     help="map family (default: the c=2 glued pair)")
    sub.add_argument("--c", type=float, help="pair-family jump parameter")
    sub.add_argument("--which", type=int, choices=[1, 2],
                     help="pair member to glue (default 1)")
    sub.add_argument("--rho", type=float, help="rotation number (rotation)")
    sub.add_argument("--kappa", type=float, help="exp-family break size")
    sub.add_argument("--offset", type=float, help="exp-family offset")
    sub.add_argument("--dps", type=int,
                     help="mpmath working precision (default: float64)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="circlebreak",
        description="Numerics for circle maps with derivative breaks: "
                    "partitions, spectra, growth sums, noisy-orbit "
                    "normality experiments.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("map-info", help="break points, jump ratios, "
                          "derivative bounds, variation, theta bounds")
    _add_common(sub)
    _add_map_flags(sub)
    sub.set_defaults(func=cmd_map_info)

    sub = subs.add_parser("rotnum", help="rotation number and convergents")
    _add_common(sub)
    _add_map_flags(sub)
    sub.add_argument("--tol", type=float, default=1e-10)
    sub.add_argument("--depth", type=int,
                     help="confirm this many partial quotients instead of "
                          "hitting --tol")
    sub.set_defaults(func=cmd_rotnum)

    sub = subs.add_parser("partition", help="dynamical partition dump")
    _add_common(sub)
    _add_map_flags(sub)
    sub.add_argument("--level", type=int, required=True)
    sub.add_argument("--base", type=float,
                     help="base point (default: the break point)")
    sub.add_argument("--two-sided", action="store_true",
                     help="include backward orbit points")
    sub.set_defaults(func=cmd_partition)

    sub = subs.add_parser(
        "thermo", help="potential table and eigenvalue curve",
        epilog=_POTENTIAL_KEY_NOTE,
    )
    _add_common(sub)
    _add_map_flags(sub)
    sub.add_argument("--depth", type=int, default=10)
    sub.add_argument("--betas", default="0,1,2,3",
                     help="comma-separated exponents (default %(default)s)")
    sub.add_argument("--potential", action="store_true",
                     help="dump the potential table instead of eigenvalues "
                          "(keys are reversed words; see below)")
    sub.set_defaults(func=cmd_thermo)

    sub = subs.add_parser("lyapunov", help="growth-sum sandwich across levels")
    _add_common(sub)
    _add_map_flags(sub)
    sub.add_argument("--z0", type=float, default=0.1234)
    sub.add_argument("--beta", type=float, default=2.0)
    sub.add_argument("--levels", default="6:12",
                     help="'lo:hi' inclusive or comma list")
    sub.set_defaults(func=cmd_lyapunov)

    sub = subs.add_parser("barycentric",
                          help="scan for orbit-depth base points")
    _add_common(sub)
    _add_map_flags(sub)
    sub.add_argument("--level", type=int, required=True)
    sub.add_argument("--count", type=int, default=40,
                     help="candidate grid size")
    sub.add_argument("--min-kappa", type=float, default=0.01)
    sub.set_defaults(func=cmd_barycentric)

    sub = subs.add_parser("clt", help="noisy-orbit normality experiment")
    _add_common(sub)
    _add_map_flags(sub)
    sub.add_argument("--z0", type=float, default=0.1234)
    sub.add_argument("--levels", default="5:7")
    sub.add_argument("--sigma", type=float,
                     help="flat noise level (must be > 0)")
    sub.add_argument("--sigma-c1", type=float,
                     help="power-law schedule constant")
    sub.add_argument("--sigma-tau", type=float,
                     help="power-law schedule exponent")
    sub.add_argument("--noise",
                     choices=["uniform", "rademacher", "truncated-gaussian"])
    sub.add_argument("--scale", type=float)
    sub.add_argument("--p", type=float)
    sub.add_argument("--trunc", type=float)
    sub.add_argument("--replicas", type=int, default=1000)
    sub.add_argument("--tube-level", type=int)
    sub.add_argument("--tube-l", type=int, default=6)
    sub.add_argument("--check", action="store_true",
                     help="exit 1 when thresholds are breached")
    sub.add_argument("--ks-threshold", type=float, default=0.05)
    sub.add_argument("--tube-threshold", type=float, default=0.99)
    sub.set_defaults(func=cmd_clt)

    sub = subs.add_parser("check", help="run the acceptance suite")
    _add_common(sub)
    sub.add_argument("--only", help="comma-separated check numbers")
    sub.set_defaults(func=cmd_check)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except CircleBreakError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
