"""Command-line surface for the package.

Commands:
    bounds      rate bounds per gap, CSV
    sweep-alpha rate bounds across symmetric-chain parameters, CSV
    scheme      construct a query distribution, JSON
    verify      check a query distribution, JSON report, exit 0/1
    lp          exact optimal rate by linear programming, JSON
    simulate    run the protocol and test empirical privacy, CSV/JSON

The chain comes either from --chain (inline JSON or a file path, schema
{"n": ..., "rows": [[...]]} or {"symmetric": {"n": ..., "alpha": ...}})
or from --n plus --alpha for a symmetric chain. Exit codes: 0 success,
1 verification or privacy-gate failure, 2 configuration error. Set
ONOFFPRIV_LOG=debug for progress logging. CSV numeric columns show six
significant digits next to full-precision raw_* twins.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from onoffpriv.bounds import (
    closed_form_small_alpha,
    closed_form_symmetric,
    rate_inner,
    rate_outer,
    theta_profile,
)
from onoffpriv.lp import formulate_lp, solve_simplex
from onoffpriv.markov import (
    TransitionMatrix,
    ZeroContextProbability,
    chain_from_dict,
    conditional_table,
    symmetric_chain,
)
from onoffpriv.scheme import SchemeDistribution, build_scheme, collapse_to_sets
from onoffpriv.sim import (
    MIN_BUCKET_SAMPLES,
    PrivacySchedule,
    SimConfig,
    average_download_rate,
    empirical_composed_history,
    empirical_privacy_test,
    run_simulation,
)
from onoffpriv.verify import check_scheme, expected_cost

log = logging.getLogger("onoffpriv")

SYMMETRY_DETECT_TOL = 1e-12
DEPENDENCE_GAP_THRESHOLD = 0.05


class ConfigError(Exception):
    """Bad flags or malformed input; maps to exit code 2."""


def _configure_logging() -> None:
    level_name = os.environ.get("ONOFFPRIV_LOG", "warning").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")


def _load_chain(args) -> TransitionMatrix:
    by_json = args.chain is not None
    by_params = args.n is not None or args.alpha is not None
    if by_json == by_params:
        raise ConfigError(
            "provide exactly one chain source: --chain, or --n with --alpha"
        )
    if by_json:
        text = args.chain
        if os.path.exists(text):
            with open(text, "r", encoding="utf-8") as fh:
                text = fh.read()
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--chain is not valid JSON: {exc}") from exc
        try:
            return chain_from_dict(obj)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad chain spec: {exc}") from exc
    if args.n is None or args.alpha is None:
        raise ConfigError("--n and --alpha must be given together")
    try:
        return symmetric_chain(args.n, args.alpha)
    except ValueError as exc:
        raise ConfigError(f"bad symmetric chain: {exc}") from exc


def _symmetric_alpha(P: TransitionMatrix) -> float | None:
    """Self-loop probability if every row is (alpha, rest uniform), else None."""
    n = P.n
    a = float(P.entries[0, 0])
    off = (1.0 - a) / (n - 1)
    diag = np.diag(P.entries)
    mask = ~np.eye(n, dtype=bool)
    if (np.abs(diag - a) > SYMMETRY_DETECT_TOL).any():
        return None
    if (np.abs(P.entries[mask] - off) > SYMMETRY_DETECT_TOL).any():
        return None
    return a


def _fmt(x: float) -> str:
    return f"{float(x):.6g}"


def _raw(x: float) -> str:
    return repr(float(x))


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv_text(header: list, rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _delta_range(args) -> list:
    if args.delta is None and args.delta_max is None:
        raise ConfigError("provide --delta and/or --delta-max")
    if args.delta is not None and args.delta_max is not None:
        if args.delta > args.delta_max:
            raise ConfigError("--delta must not exceed --delta-max")
        return list(range(args.delta, args.delta_max + 1))
    if args.delta is not None:
        return [args.delta]
    return list(range(0, args.delta_max + 1))


def cmd_bounds(args) -> int:
    P = _load_chain(args)
    alpha = _symmetric_alpha(P)
    n = P.n
    header = ["delta", "inv_r_inner", "inv_r_outer", "r_inner", "r_outer"]
    if alpha is not None:
        header += ["cf_r_inner", "cf_r_outer"]
    raw_cols = [h for h in header if h != "delta"]
    header = header + ["raw_" + h for h in raw_cols]
    rows = []
    for delta in _delta_range(args):
        cond = conditional_table(P, delta)
        profile = theta_profile(cond)
        inv_i = rate_inner(profile)
        inv_o = rate_outer(profile)
        vals = [inv_i, inv_o, 1.0 / inv_i, 1.0 / inv_o]
        if alpha is not None:
            if alpha >= 1.0 / n:
                cf = closed_form_symmetric(n, alpha, delta)
                vals += [1.0 / cf, 1.0 / cf]
            else:
                cf_inv_o, cf_inv_i = closed_form_small_alpha(n, alpha, delta)
                vals += [1.0 / cf_inv_i, 1.0 / cf_inv_o]
        rows.append([str(delta)] + [_fmt(v) for v in vals] + [_raw(v) for v in vals])
        log.info("bounds delta=%d done", delta)
    _emit(_csv_text(header, rows), args.out)
    return 0


def default_alpha_grid() -> list:
    """The sweep grid: sixtieths of the unit interval, endpoint excluded."""
    return [k / 60.0 for k in range(60)]


def cmd_sweep_alpha(args) -> int:
    if args.n is None:
        raise ConfigError("sweep-alpha requires --n")
    delta = args.delta if args.delta is not None else 1
    n = args.n
    header = [
        "alpha", "r_inner", "r_outer",
        "raw_alpha", "raw_r_inner", "raw_r_outer",
    ]
    rows = []
    for alpha in default_alpha_grid():
        P = symmetric_chain(n, alpha)
        try:
            profile = theta_profile(conditional_table(P, delta))
        except ZeroContextProbability:
            log.warning("alpha=%g skipped: context probability vanishes", alpha)
            continue
        r_i = 1.0 / rate_inner(profile)
        r_o = 1.0 / rate_outer(profile)
        rows.append(
            [_fmt(alpha), _fmt(r_i), _fmt(r_o), _raw(alpha), _raw(r_i), _raw(r_o)]
        )
    _emit(_csv_text(header, rows), args.out)
    return 0


def _uniform_prior(m: int) -> np.ndarray:
    return np.full(m, 1.0 / m)


def cmd_scheme(args) -> int:
    P = _load_chain(args)
    if args.delta is None:
        raise ConfigError("scheme requires --delta")
    cond = conditional_table(P, args.delta)
    profile = theta_profile(cond)
    multiset = build_scheme(profile, cond)
    setform = collapse_to_sets(multiset)
    prior = _uniform_prior(cond.m)
    obj = {
        "n": cond.n,
        "delta": cond.delta,
        "theta": profile.theta.tolist(),
        "multiset": multiset.to_json_obj(),
        "set": setform.to_json_obj(),
        "summary": {
            "multiset_entries": multiset.entry_count,
            "set_entries": setform.entry_count,
            "expected_size_multiset": expected_cost(multiset, cond, prior),
            "expected_size_set": expected_cost(setform, cond, prior),
            "achievable_cost": rate_inner(profile),
        },
    }
    _emit(_json_text(obj), args.out)
    return 0


def cmd_verify(args) -> int:
    P = _load_chain(args)
    if args.delta is None:
        raise ConfigError("verify requires --delta")
    cond = conditional_table(P, args.delta)
    profile = theta_profile(cond)
    if args.scheme:
        with open(args.scheme, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        if "multiset" in obj:
            obj = obj["multiset"]
        elif "set" in obj:
            obj = obj["set"]
        try:
            s = SchemeDistribution.from_json_obj(obj)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad scheme file: {exc}") from exc
    else:
        s = build_scheme(profile, cond)
    report = check_scheme(s, cond, profile, tol=args.tol)
    _emit(_json_text(report.to_json_obj()), args.out)
    return 0 if report.passes() else 1


def cmd_lp(args) -> int:
    P = _load_chain(args)
    if args.delta is None:
        raise ConfigError("lp requires --delta")
    cond = conditional_table(P, args.delta)
    profile = theta_profile(cond)
    problem = formulate_lp(cond)
    log.info(
        "lp has %d variables, %d rows", len(problem.var_keys), len(problem.row_keys)
    )
    sol = solve_simplex(problem)
    obj = {
        "n": cond.n,
        "delta": cond.delta,
        "num_vars": len(problem.var_keys),
        "num_rows": len(problem.row_keys),
        "value": sol.value,
        "optimal_rate": 1.0 / sol.value,
        "status": sol.status,
        "iterations": sol.iterations,
        "inv_r_inner": rate_inner(profile),
        "inv_r_outer": rate_outer(profile),
        "solution": sol.to_json_obj(),
    }
    _emit(_json_text(obj), args.out)
    return 0


def _trace_csv(trace) -> str:
    header = ["t", "x", "f", "tau", "delta", "q_size", "bytes", "decode_ok"]
    rows = [
        [
            t,
            int(trace.x[t]),
            int(trace.flag[t]),
            int(trace.tau[t]),
            int(trace.delta[t]),
            int(trace.q_size[t]),
            int(trace.bytes_down[t]),
            int(trace.decode_ok[t]),
        ]
        for t in range(trace.horizon)
    ]
    return _csv_text(header, rows)


def cmd_simulate(args) -> int:
    P = _load_chain(args)
    if args.horizon is None:
        raise ConfigError("simulate requires --horizon")
    try:
        schedule = PrivacySchedule.parse(args.schedule)
    except ValueError as exc:
        raise ConfigError(f"bad schedule: {exc}") from exc
    cfg = SimConfig(
        chain=P,
        schedule=schedule,
        horizon=args.horizon,
        msg_len=args.msg_len,
        seed=args.seed,
    )
    trace = run_simulation(cfg)
    decode_failures = int((~trace.decode_ok).sum())
    privacy = []
    dependent = False
    for delta, (count, _mean) in sorted(trace.delta_buckets.items()):
        if count < MIN_BUCKET_SAMPLES:
            continue
        stats = empirical_privacy_test(trace, delta)
        privacy.append(stats.to_json_obj())
        if stats.flags_dependence(DEPENDENCE_GAP_THRESHOLD):
            dependent = True
    passed = decode_failures == 0 and not dependent
    stats_obj = {
        "n": trace.n,
        "horizon": trace.horizon,
        "seed": args.seed,
        "schedule": schedule.spec_string(),
        "msg_len": trace.msg_len,
        "decode_failures": decode_failures,
        "total_bytes": trace.total_bytes(),
        "rates": average_download_rate(trace),
        "delta_buckets": {
            str(d): {"count": c, "mean_q_size": m}
            for d, (c, m) in sorted(trace.delta_buckets.items())
        },
        "privacy": privacy,
        "composed_history": {
            str(k): v for k, v in sorted(
                empirical_composed_history(trace).items()
            )
        },
        "pass": passed,
    }
    if args.out and args.out.endswith(".csv"):
        _emit(_trace_csv(trace), args.out)
        sys.stdout.write(_json_text(stats_obj))
    else:
        _emit(_json_text(stats_obj), args.out)
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="onoffpriv",
        description="rate bounds, query schemes, and simulation for "
        "on-off private retrieval",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp, chain=True):
        if chain:
            sp.add_argument("--chain", help="inline JSON or path to a chain file")
        sp.add_argument("--n", type=int, help="symmetric chain: number of states")
        sp.add_argument(
            "--alpha", type=float, help="symmetric chain: self-loop probability"
        )
        sp.add_argument("--out", help="output path (.csv or .json); default stdout")

    p = sub.add_parser("bounds", help="rate bounds per gap")
    add_common(p)
    p.add_argument("--delta", type=int, help="first (or only) gap")
    p.add_argument("--delta-max", type=int, help="last gap of the range")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("sweep-alpha", help="bounds across symmetric chains")
    add_common(p, chain=False)
    p.add_argument("--delta", type=int, help="gap since the flag was on (default 1)")
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("scheme", help="construct a query distribution")
    add_common(p)
    p.add_argument("--delta", type=int, help="gap since the flag was on")
    p.set_defaults(func=cmd_scheme)

    p = sub.add_parser("verify", help="check a query distribution")
    add_common(p)
    p.add_argument("--delta", type=int, help="gap since the flag was on")
    p.add_argument("--tol", type=float, default=1e-9, help="pass threshold")
    p.add_argument("--scheme", help="scheme JSON to check instead of a fresh build")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("lp", help="exact optimal rate")
    add_common(p)
    p.add_argument("--delta", type=int, help="gap since the flag was on")
    p.set_defaults(func=cmd_lp)

    p = sub.add_parser("simulate", help="run the retrieval protocol")
    add_common(p)
    p.add_argument("--horizon", type=int, help="number of steps")
    p.add_argument("--seed", type=int, default=0, help="run seed")
    p.add_argument(
        "--schedule",
        default="always-on",
        help="always-on | off-after-0 | bernoulli:P | periodic:K | explicit:1,0,...",
    )
    p.add_argument("--msg-len", type=int, default=16, help="message length in bytes")
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
