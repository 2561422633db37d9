"""Command-line entry points.

Exit codes are frozen for CI: 0 = UNSAT (safe), 1 = SAT (counterexample),
2 = UNKNOWN, 3 = usage or parse error, 4 = oracle cap exceeded.  Counters are
printed as key=value lines for machine parsing.
"""

from __future__ import annotations

import argparse
import sys

from .model import ParseError, DimensionError, format_rational, parse_problem
from .search import CapExceeded, Config, hsrv_verify, icl_verify, oracle_verify
from . import prooflog

EXIT_UNSAT = 0
EXIT_SAT = 1
EXIT_UNKNOWN = 2
EXIT_USAGE = 3
EXIT_CAP = 4


def _load(path):
    try:
        return parse_problem(path)
    except (OSError, ParseError, DimensionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None


def _print_counters(budget):
    for key, value in budget.counters().items():
        print(f"{key}={value}")


def cmd_verify(args) -> int:
    problem = _load(args.problem)
    if problem is None:
        return EXIT_USAGE
    net, region, prop = problem
    config = Config(
        strategy=args.strategy,
        max_depth=args.max_depth,
        lp_budget=args.lp_budget,
        gate_budget=args.gate_budget,
        templates=args.templates,
        workers=args.workers,
    )
    driver = hsrv_verify if args.strategy == "hsrv" else icl_verify
    result = driver(net, region, prop, config)
    if result.budget is not None:
        _print_counters(result.budget)
    if result.status == "unsat":
        print("UNSAT")
        if args.emit_proof:
            with open(args.emit_proof, "wb") as fh:
                fh.write(prooflog.emit(result.proof, args.problem))
        return EXIT_UNSAT
    if result.status == "sat":
        witness = [format_rational(v) for v in result.witness]
        print(f"SAT witness=[{', '.join(witness)}]")
        if args.witness:
            with open(args.witness, "w") as fh:
                fh.write("\n".join(witness) + "\n")
        return EXIT_SAT
    print(f"UNKNOWN reason={result.reason}")
    return EXIT_UNKNOWN


def cmd_check(args) -> int:
    problem = _load(args.problem)
    if problem is None:
        return EXIT_USAGE
    try:
        with open(args.proof, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    outcome = prooflog.check_proof(problem, data, args.problem)
    if outcome.accepted:
        print("ACCEPT")
        return 0
    print(f"REJECT path={outcome.path} reason={outcome.reason}")
    return 1


def cmd_oracle(args) -> int:
    problem = _load(args.problem)
    if problem is None:
        return EXIT_USAGE
    net, region, prop = problem
    try:
        result = oracle_verify(net, region, prop, cap=args.cap)
    except CapExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    if result.budget is not None:
        _print_counters(result.budget)
    if result.status == "unsat":
        print("UNSAT")
        return EXIT_UNSAT
    witness = [format_rational(v) for v in result.witness]
    print(f"SAT witness=[{', '.join(witness)}]")
    return EXIT_SAT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relucert",
        description="Certificate-carrying safety verification of ReLU networks "
                    "over box input domains.")
    sub = parser.add_subparsers(dest="command", required=True)

    verify = sub.add_parser("verify", help="decide a safety query")
    verify.add_argument("problem")
    verify.add_argument("--strategy", choices=("icl", "hsrv"), default="icl")
    verify.add_argument("--emit-proof", metavar="PATH")
    verify.add_argument("--witness", metavar="PATH")
    verify.add_argument("--max-depth", type=int, default=64)
    verify.add_argument("--lp-budget", type=int, default=None)
    verify.add_argument("--gate-budget", type=int, default=None)
    verify.add_argument("--workers", type=int, default=1)
    verify.add_argument("--templates", choices=("default", "margin-only"),
                        default="default")
    verify.set_defaults(func=cmd_verify)

    check = sub.add_parser("check", help="replay a proof log")
    check.add_argument("problem")
    check.add_argument("proof")
    check.set_defaults(func=cmd_check)

    oracle = sub.add_parser("oracle", help="ground truth by exhaustive enumeration")
    oracle.add_argument("problem")
    oracle.add_argument("--cap", type=int, default=12)
    oracle.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
