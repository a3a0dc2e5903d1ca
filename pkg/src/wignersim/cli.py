"""Command-line frontend.

Exit codes: 0 success, 1 parse/validation/usage error, 2 engine assertion,
3 when the experiment ran but an expectation failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .engine import DynamicsModel
from .errors import (
    EngineError,
    InvalidThreshold,
    ParseError,
    UnknownBuiltin,
    ValidationError,
    WignerSimError,
)
from .protocol import Protocol, builtin, validate
from .protofile import parse, serialize
from .trials import TrialReport, bayes_factor, run_trials, trials_to_threshold

EXIT_OK, EXIT_INPUT, EXIT_ENGINE, EXIT_FALSIFIED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _site_list(text: str) -> frozenset[int]:
    try:
        return frozenset(int(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated step numbers, got {text!r}") from None


def _add_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--protocol", metavar="FILE", help="path to a .wproto file")
    src.add_argument("--builtin", metavar="NAME", help="deutsch-wigner, which-outcome, photon-mirror or chain-N")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wignersim", description="Observer-in-the-lab protocol simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run seeded trials and emit a report")
    _add_source(run)
    run.add_argument("--model", required=True, choices=("unitary", "collapse"))
    run.add_argument("--trials", type=_positive_int, default=1000)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--format", choices=("json", "tsv"), default="json")
    run.add_argument("--out", metavar="PATH")
    run.add_argument("--workers", type=_positive_int, default=1, help="worker processes")
    run.add_argument("--collapse-sites", type=_site_list, metavar="STEPS",
                     help="only these collapse-site step numbers fire (default: all)")
    run.add_argument("--recollapse", action="store_true",
                     help="collapse markers inside reversed ranges fire again")

    for name, text in (
        ("validate", "check a protocol and print its step count"),
        ("canon", "print the canonical serialization"),
        ("invert", "print the protocol with reverse ranges expanded"),
    ):
        _add_source(sub.add_parser(name, help=text))

    dist = sub.add_parser("distinguish", help="trials needed to reach a Bayes factor")
    dist.add_argument("--bayes-factor", type=float, required=True, metavar="B")
    return parser


def _load(args) -> Protocol:
    if args.builtin:
        return builtin(args.builtin)
    path = Path(args.protocol)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise _InputError(f"{path}: {exc.strerror}") from None
    try:
        return parse(data)
    except ParseError as exc:
        raise _InputError(f"{path}:{exc.span.line}:{exc.span.column}: error: {exc.message}") from None


class _InputError(Exception):
    pass


def _source_name(args) -> str:
    return args.protocol or f"<builtin {args.builtin}>"


def _validate(args, protocol: Protocol):
    try:
        return validate(protocol)
    except ValidationError as exc:
        where = f":{exc.span.line}:{exc.span.column}" if exc.span is not None else ""
        step = f" (step {exc.step})" if exc.step is not None else ""
        raise _InputError(f"{_source_name(args)}{where}: error: {exc.code}{step}: {exc.message}") from None


def format_tsv(report: TrialReport) -> str:
    header = "\t".join([*report.outcome_registers, "count"])
    rows = ["\t".join([*(str(v) for v in o), str(c)]) for o, c in sorted(report.histogram.items())]
    return "\n".join([header, *rows]) + "\n"


def format_json(report: TrialReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    vp = _validate(args, _load(args))
    model = DynamicsModel(args.model, args.collapse_sites, args.recollapse)
    report = run_trials(vp, model, args.trials, args.seed, workers=args.workers)
    text = format_json(report) if args.format == "json" else format_tsv(report)
    _emit(text, args.out)
    for v in report.expectations:
        if not v.passed:
            print(
                f"expectation at step {v.step} failed: observed {v.observed_prob!r}, "
                f"target {v.target_prob!r} +/- {v.tol!r}",
                file=sys.stderr,
            )
    return EXIT_OK if report.all_passed else EXIT_FALSIFIED


def cmd_validate(args) -> int:
    vp = _validate(args, _load(args))
    print(f"ok {len(vp.protocol.steps)} steps")
    return EXIT_OK


def cmd_canon(args) -> int:
    protocol = _load(args)
    _validate(args, protocol)
    sys.stdout.write(serialize(protocol))
    return EXIT_OK


def cmd_invert(args) -> int:
    vp = _validate(args, _load(args))
    sys.stdout.write(serialize(vp.expanded()))
    return EXIT_OK


def cmd_distinguish(args) -> int:
    try:
        n = trials_to_threshold(args.bayes_factor)
    except InvalidThreshold as exc:
        print(f"wignersim: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    lines = [f"trials_to_threshold {n}", "n\tbayes_factor"]
    lines += [f"{k}\t{bayes_factor(k, k):.17g}" for k in range(1, n + 1)]
    print("\n".join(lines))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "validate": cmd_validate,
    "canon": cmd_canon,
    "invert": cmd_invert,
    "distinguish": cmd_distinguish,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except _InputError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except UnknownBuiltin as exc:
        print(f"wignersim: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EngineError as exc:
        print(f"wignersim: engine assertion: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    except WignerSimError as exc:
        print(f"wignersim: error: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
