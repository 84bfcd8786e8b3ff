"""``gauth`` command-line front end.

Usage::

    gauth run --scenario walkaway_t5_l1 --seed 7 --out out/
    gauth attack replay --scenario replay_attack --seed 11
    gauth calibrate optics|latency|battery
    gauth otp --key GEZDGNBVGY3TQOJQGEZDGNBVGY3TQOJQ --mode hotp --counter 0

``--scenario`` takes a file path or the name of a bundled fixture. The
``GAUTH_OUT`` environment variable sets the default output directory.
Exit status: 0 on success, 1 when a check fails, 2 on bad input.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from ..otp import OtpError, OtpKey, TotpParams, hotp_generate, totp_generate
from ..simnet.runner import run
from .attack import attack_replay
from .calibrate import CALIBRATORS
from .report import ReportError, build_report, write_report
from .scenario import ScenarioError, fixture_names, load_scenario, resolve_scenario

DEFAULT_OUT = "out"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _load(args):
    cfg = load_scenario(resolve_scenario(args.scenario))
    if getattr(args, "strict_optics", False):
        cfg = dataclasses.replace(cfg, strict_optics=True)
    return cfg


def _run_one(cfg, seed: int):
    return build_report(run(cfg, seed))


def cmd_run(args) -> int:
    cfg = _load(args)
    base = cfg.seed if args.seed is None else args.seed
    seeds = [base + i for i in range(args.runs)]
    if args.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            reports = list(pool.map(_run_one, [cfg] * len(seeds), seeds))
    else:
        reports = [_run_one(cfg, s) for s in seeds]
    # everything computed before anything is written
    for rep in reports:
        target = write_report(rep, args.out)
        if not args.quiet:
            print(f"# {target}")
            print(rep.summary_txt(), end="")
    return EXIT_OK


def cmd_attack(args) -> int:
    verdict = attack_replay(_load(args), args.seed)
    print(verdict.format(), end="")
    return EXIT_OK if verdict.passed else EXIT_FAIL


def cmd_calibrate(args) -> int:
    fn = CALIBRATORS[args.component]
    cal = fn() if args.component == "battery" else fn(seed=args.seed)
    print(cal.format(), end="")
    return EXIT_OK if cal.ok else EXIT_FAIL


def cmd_otp(args) -> int:
    key = OtpKey.from_base32(args.key)
    if args.mode == "hotp":
        if args.counter is None:
            raise OtpError("hotp needs --counter")
        code = hotp_generate(key, args.counter, args.digits)
    else:
        if args.time is None:
            raise OtpError("totp needs --time")
        code = totp_generate(key, args.time, TotpParams(time_step=args.step), args.digits)
    print(code)
    return EXIT_OK


def cmd_fixtures(args) -> int:
    print("\n".join(fixture_names()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gauth", description="QR-challenge authentication simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write a report")
    p.add_argument("--scenario", required=True, help="scenario file or fixture name")
    p.add_argument("--seed", type=int, default=None, help="defaults to the scenario's seed")
    p.add_argument("--out", default=os.environ.get("GAUTH_OUT", DEFAULT_OUT), help="output root (env GAUTH_OUT)")
    p.add_argument("--runs", type=int, default=1, help="consecutive seeds to run")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for --runs")
    p.add_argument("--strict-optics", action="store_true", help="reject geometries outside the calibrated cells")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("attack", help="adversary experiments")
    asub = p.add_subparsers(dest="attack", required=True)
    r = asub.add_parser("replay", help="replay captured codes and guess nonces")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--strict-optics", action="store_true")
    r.set_defaults(func=cmd_attack)

    p = sub.add_parser("calibrate", help="check a model against its configured values")
    p.add_argument("component", choices=sorted(CALIBRATORS))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("otp", help="print an HOTP or TOTP code")
    p.add_argument("--key", required=True, help="base-32 shared secret")
    p.add_argument("--mode", choices=("hotp", "totp"), required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--counter", type=int)
    group.add_argument("--time", type=float, help="unix seconds")
    p.add_argument("--digits", type=int, default=6, choices=(6, 7, 8))
    p.add_argument("--step", type=int, default=30, help="TOTP time step in seconds")
    p.set_defaults(func=cmd_otp)

    p = sub.add_parser("fixtures", help="list bundled scenarios")
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "runs", 1) < 1 or getattr(args, "jobs", 1) < 1:
        parser.error("--runs and --jobs must be >= 1")
    try:
        return args.func(args)
    except (ScenarioError, OtpError, ReportError, ValueError) as exc:
        print(f"gauth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"gauth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
