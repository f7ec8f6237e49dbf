"""Command line entry point: ``qbcsim {run,sweep,attack,bounds,check-demo}``."""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from dataclasses import asdict
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import analysis
from .adversary import (
    ALICE_KINDS,
    ALICE_PARAMS,
    BOB_KINDS,
    BOB_PARAMS,
    alice_epr_attack_no_checking,
    alice_from_name,
    bob_from_name,
    permutation_attack_residual,
)
from .protocol import Mode, ProtocolConfig, ResourceCapError
from .qlin import DomainError, LayoutError
from .session import run_protocol

EXIT_OK, EXIT_USAGE, EXIT_CHEAT = 0, 1, 2
CONFIG_KEYS = {"n", "M", "lam", "seed", "modulation", "entanglement", "eq8_check", "no_bob_check",
               "pair_checks", "alice", "bob", "alice_param", "bob_param", "trials", "workers",
               "n_values", "fixed", "format", "output"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_angle(text: str) -> float:
    """A float, or a multiple of pi such as ``pi/2``, ``-pi/4``, ``3*pi/8``."""
    text = str(text).strip().replace(" ", "")
    m = re.fullmatch(r"([+-]?)(?:(\d+(?:\.\d*)?)\*)?pi(?:/(\d+(?:\.\d*)?))?", text)
    if m:
        sign, mult, div = m.groups()
        value = float(mult or 1) * math.pi / float(div or 1)
        return -value if sign == "-" else value
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an angle: {text!r}") from None


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(str(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a fraction: {text!r}") from None


def _param(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("protocol configuration")
    g.add_argument("--n", type=int, default=4, help="number of Bob's qubits (default 4)")
    g.add_argument("--M", type=int, default=8, help="size of the angle grid on the circle, even (default 8)")
    g.add_argument("--lam", type=_fraction, default=Fraction(1, 2), help="checked fraction lambda (default 1/2)")
    g.add_argument("--seed", type=int, default=None, help="64-bit seed; required, here or in --config")
    g.add_argument("--modulation", type=parse_angle, default=math.pi / 2,
                   help="modulation angle for R(+-phi): float or pi expression (default pi/2)")
    g.add_argument("--entanglement", choices=[m.value for m in Mode if m is not Mode.PREMEASURED],
                   default=Mode.CYCLIC.value, help="Alice's prescribed entanglement (default cyclic)")
    g.add_argument("--eq8-check", action="store_true", help="Bob tests the cyclic superposition after commit")
    g.add_argument("--no-bob-check", action="store_true", help="skip the fraction-lambda check")
    g.add_argument("--pair-checks", type=int, default=0, help="pairs Alice tests before committing (default 0)")
    g.add_argument("--config", type=Path, default=None,
                   help="JSON file with any of these options (underscored names); flags win")
    o = p.add_argument_group("output")
    o.add_argument("--output", type=Path, default=None, help="write here instead of stdout")
    o.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="report format (default csv)")


def _add_strategy_flags(p: argparse.ArgumentParser):
    alice_help = "; ".join(f"{k}: {v}" for k, v in ALICE_PARAMS.items())
    bob_help = "; ".join(f"{k}: {v}" for k, v in BOB_PARAMS.items())
    p.add_argument("--alice", choices=ALICE_KINDS, default="honest", help=f"Alice's strategy. {alice_help}")
    p.add_argument("--bob", choices=BOB_KINDS, default="honest", help=f"Bob's strategy. {bob_help}")
    p.add_argument("--alice-param", type=_param, action="append", default=[], metavar="KEY=VALUE",
                   help="strategy parameter for Alice, repeatable")
    p.add_argument("--bob-param", type=_param, action="append", default=[], metavar="KEY=VALUE",
                   help="strategy parameter for Bob, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qbcsim", description="Simulate the QBC1 quantum bit commitment protocol.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="play one session and write its transcript (always jsonl)")
    _add_config_flags(p)
    _add_strategy_flags(p)

    p = sub.add_parser("sweep", help="exact Bob-side trace distance per n against 2/n")
    _add_config_flags(p)
    p.add_argument("--n-values", type=int, nargs="+", default=[2, 3, 4, 5, 6], help="values of n (default 2..6)")

    p = sub.add_parser("attack", help="Monte Carlo over a pair of strategies")
    _add_config_flags(p)
    _add_strategy_flags(p)
    p.add_argument("--trials", type=int, default=10_000, help="number of sessions (default 10000)")
    p.add_argument("--workers", type=int, default=1, help="worker processes; output does not depend on it")

    p = sub.add_parser("bounds", help="P_A of the steering attack against the P_B sandwich, per n")
    _add_config_flags(p)
    p.add_argument("--n-values", type=int, nargs="+", default=[2, 3, 4, 5, 6], help="values of n (default 2..6)")

    p = sub.add_parser("check-demo", help="residual ancilla support after fixing checked positions")
    _add_config_flags(p)
    p.add_argument("--fixed", type=int, default=None, help="positions fixed by the check (default lambda*n)")
    return parser


def _load_config_file(path: Path) -> dict:
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"--config: cannot read {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("--config: expected a JSON object")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"--config: unknown keys {unknown}")
    return data


def parse_args(argv) -> argparse.Namespace:
    """Parse twice: once to find --config, then with the file's values as defaults."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    data = _load_config_file(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    converters = {"lam": _fraction, "modulation": parse_angle, "output": Path,
                  "alice_param": lambda v: [_param(x) for x in v],
                  "bob_param": lambda v: [_param(x) for x in v]}
    defaults = {}
    for key, value in data.items():
        if key not in known:
            raise UsageError(f"--config: key {key!r} does not apply to {args.command}")
        defaults[key] = converters.get(key, lambda v: v)(value)
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def config_from_args(args) -> ProtocolConfig:
    if args.seed is None:
        raise UsageError("--seed is required (no wall-clock seeding)")
    return ProtocolConfig(n=args.n, M=args.M, lam=args.lam, seed=args.seed,
                          alice_entanglement=Mode(args.entanglement), modulation=args.modulation,
                          bob_check=not args.no_bob_check, eq8_check=args.eq8_check,
                          alice_pair_checks=args.pair_checks)


def _strategies(args):
    try:
        alice = alice_from_name(args.alice, **dict(args.alice_param))
    except TypeError as exc:
        raise UsageError(f"--alice-param: {exc}") from None
    try:
        bob = bob_from_name(args.bob, **dict(args.bob_param))
    except TypeError as exc:
        raise UsageError(f"--bob-param: {exc}") from None
    return alice, bob


def _emit(text: str, args):
    if args.output is None:
        sys.stdout.write(text)
    else:
        args.output.write_text(text)


def cmd_run(args) -> int:
    config = config_from_args(args)
    alice, bob = _strategies(args)
    result = run_protocol(config, alice, bob)
    _emit(result.transcript.to_jsonl(), args)
    print(f"outcome={result.outcome} committed={result.committed_bit} declared={result.declared_bit}"
          f" guess={result.bob_guess}", file=sys.stderr)
    return EXIT_OK if result.accepted else EXIT_CHEAT


def cmd_sweep(args) -> int:
    config = config_from_args(args)
    rows = analysis.concealing_scaling(args.n_values, lam=config.lam, seed=config.seed,
                                       modulation=config.modulation)
    _emit(analysis.write_records([r.to_dict() for r in rows], args.format), args)
    return EXIT_OK


def cmd_attack(args) -> int:
    config = config_from_args(args)
    alice, bob = _strategies(args)
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    report = analysis.monte_carlo(config, alice, bob, args.trials, workers=args.workers)
    _emit(analysis.write_records([report.to_dict()], args.format), args)
    return EXIT_OK


def cmd_bounds(args) -> int:
    base = config_from_args(args)
    rows = []
    previous = -math.inf
    for n in args.n_values:
        config = ProtocolConfig(**{**asdict(base), "n": n, "bob_check": False})
        res = alice_epr_attack_no_checking(config, np.random.default_rng(config.seed))
        check = analysis.binding_bounds_check(p_b=res.p_b, p_a=res.p_a)
        rows.append({"n": n, "p_b": res.p_b, "p_a": res.p_a, "lower": check.lower, "upper": check.upper,
                     "lower_ok": check.lower_ok, "upper_ok": check.upper_ok,
                     "nondecreasing": res.p_a >= previous - analysis.EXACT_TOL,
                     "schema_version": analysis.SCHEMA_VERSION})
        previous = res.p_a
    _emit(analysis.write_records(rows, args.format), args)
    return EXIT_OK if all(r["lower_ok"] and r["upper_ok"] for r in rows) else EXIT_CHEAT


def cmd_check_demo(args) -> int:
    config = config_from_args(args)
    fixed = config.check_size if args.fixed is None else args.fixed
    if not 1 <= fixed < config.n:
        raise UsageError(f"--fixed must lie in [1, n), got {fixed}")
    rows = []
    for mode in (Mode.CYCLIC, Mode.PERMUTATION):
        res = permutation_attack_residual(config, list(range(1, fixed + 1)),
                                          np.random.default_rng(config.seed), mode=mode)
        rows.append({"mode": mode.value, "n": res.n, "fixed": res.fixed,
                     "residual_dimension": res.residual_dimension, "overlap": res.overlap,
                     "schema_version": analysis.SCHEMA_VERSION})
    _emit(analysis.write_records(rows, args.format), args)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "attack": cmd_attack, "bounds": cmd_bounds,
            "check-demo": cmd_check_demo}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"qbcsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResourceCapError as exc:
        print(f"qbcsim: resource cap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, LayoutError) as exc:
        print(f"qbcsim: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
