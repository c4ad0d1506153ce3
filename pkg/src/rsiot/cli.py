"""Command-line entry point: ``rsiot run|tamper-mc|gas-report|list-scenarios``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    ScenarioError,
    Transcript,
    builtin_scenarios,
    gas_report,
    load_scenario,
    monte_carlo_tamper,
    run,
    tamper_detection_oracle,
)


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    if args.gas_table:
        scenario = replace(scenario, gas_table=args.gas_table)
    transcript = run(scenario)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{scenario.name}.transcript.jsonl").write_text(transcript.dumps())
        (out / f"{scenario.name}.gas.txt").write_text("\n".join(gas_report(transcript).lines()) + "\n")
    for key, value in transcript.verdict.items():
        print(f"{key}={json.dumps(value)}")
    for failure in transcript.final["expectation_failures"]:
        print(f"UNEXPECTED {failure['key']}: expected {failure['expected']}, got {failure['actual']}")
    print(f"verdict={'expected' if transcript.passed else 'unexpected'}")
    return 0 if transcript.passed else 1


def _cmd_tamper(args: argparse.Namespace) -> int:
    try:
        rate = monte_carlo_tamper(args.l, args.n, args.m, args.trials, args.seed, backend=args.backend)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    oracle = tamper_detection_oracle(args.l, args.n, args.m)
    print(f"l={args.l} n={args.n} m={args.m} trials={args.trials} seed={args.seed}")
    print(f"detection_rate={rate:.6f}")
    print(f"closed_form={oracle:.6f}")
    print(f"abs_error={abs(rate - oracle):.6f}")
    return 0


def _cmd_gas(args: argparse.Namespace) -> int:
    try:
        transcript = Transcript.load(args.transcript)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print("\n".join(gas_report(transcript).lines()))
    return 0


def _cmd_list(args: argparse.Namespace) -> int:
    for name in builtin_scenarios():
        scenario = load_scenario(name)
        print(f"{name:<24} {' '.join(scenario.description.split())}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsiot", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file or builtin scenario")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--gas-table", metavar="FILE")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("tamper-mc", help="estimate the tamper detection rate")
    p.add_argument("--l", type=int, required=True, help="packet length")
    p.add_argument("--n", type=int, required=True, help="commitment length")
    p.add_argument("--m", type=int, required=True, help="bytes altered by the relay")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=("compiled", "python"), default="compiled")
    p.set_defaults(func=_cmd_tamper)

    p = sub.add_parser("gas-report", help="summarise gas from a transcript file")
    p.add_argument("transcript")
    p.set_defaults(func=_cmd_gas)

    p = sub.add_parser("list-scenarios", help="list builtin scenarios")
    p.set_defaults(func=_cmd_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
