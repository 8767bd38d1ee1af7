"""Command line entry point: ``solve``, ``compare``, ``constants``, ``scenarios``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import InvalidArgument, NumericalFailure
from .estimates import PNormSettings, lambda_p, smallness_advisory
from .experiment import builtin_scenarios, compare, load_config, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _cmd_solve(args) -> int:
    cfg = load_config(args.config)
    meta = run(cfg, args.out)
    m = meta["metrics"]
    print(f"scenario={cfg.scenario} converged={m['converged']} iterations={m['iterations']} "
          f"Y0={m['y0']:.6g} (se {m['y0_stderr']:.2g})")
    return EXIT_OK


def _cmd_compare(args) -> int:
    report = compare(args.dir_a, args.dir_b)
    for name, entry in report["files"].items():
        if "present" in entry:
            print(f"{name}: present in only one run {entry['present']}")
        elif not entry["shape_match"]:
            print(f"{name}: shape mismatch {entry['shape_a']} vs {entry['shape_b']}")
        else:
            flag = " UNEXPECTED" if entry["unexpected_difference"] else ""
            print(f"{name}: max_abs_diff={entry['max_abs_diff']:.3g} "
                  f"bit_equal={entry['bit_equal']}{flag}")
    print(f"Y0 diff={report['y0_diff']:.3g} combined se={report['y0_combined_stderr']:.3g} "
          f"within 5 se={report['y0_within_5se']}")
    print(f"bit_equal={report['bit_equal']}")
    if args.json:
        print(json.dumps(report, indent=2, default=str))
    return EXIT_OK


def _cmd_constants(args) -> int:
    settings = PNormSettings(args.p, args.K, args.T)
    adv = smallness_advisory(settings, q=args.q, multiplier=args.multiplier)
    print(f"lambda_p = {lambda_p(args.p):.17g}")
    print("d_p = " + ("infeasible" if adv["d_p"] is None else f"{adv['d_p']:.17g}"))
    print(f"contraction = {adv['contraction']:.17g} (multiplier {args.multiplier:g}, q {args.q:g})")
    print(f"advisory = {adv['advisory']}")
    return EXIT_OK


def _cmd_scenarios(args) -> int:
    for name, path in sorted(builtin_scenarios().items()):
        print(f"{name}\t{path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delaybsde",
                                     description="Delayed BSDE solver and diagnostics")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run an experiment config")
    p.add_argument("config", help="TOML config path or builtin:NAME")
    p.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("compare", help="diff two run directories")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.add_argument("--json", action="store_true", help="also dump the full report as JSON")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("constants", help="print lambda_p, d_p and the smallness advisory")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--K", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--multiplier", type=float, default=1.0)
    p.set_defaults(func=_cmd_constants)

    p = sub.add_parser("scenarios", help="list shipped scenario configs")
    p.set_defaults(func=_cmd_scenarios)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidArgument, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
