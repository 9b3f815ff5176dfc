"""Command line entry point: ``preof5g run|validate|compare|sweep``.

Exit codes: 0 success, 1 validation failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

from .codec import format_header
from .report import ComparisonError, compare, emit_report, format_comparison, parse_report
from .scenario import ScenarioError, load_scenario, run_scenario

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def _print_errors(path, exc: ScenarioError) -> None:
    for line, msg in exc.errors:
        where = f"{path}:{line}" if line else str(path)
        print(f"{where}: {msg}", file=sys.stderr)


def _format_trace_entry(entry) -> str:
    parts = []
    for item in entry:
        if isinstance(item, tuple):
            parts.append("[" + ", ".join(format_header(h) for h in item) + "]")
        else:
            parts.append(str(item))
    return " ".join(parts)


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        _print_errors(args.scenario, exc)
        return EXIT_INVALID
    try:
        report = run_scenario(scenario, seed=args.seed, trace=args.trace)
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        print(f"{args.scenario}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    text = emit_report(report, args.format)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.trace:
        for entry in report.trace:
            print("trace " + _format_trace_entry(entry), file=sys.stderr)
    problems = report.audit()
    for p in problems:
        print(f"audit: {p}", file=sys.stderr)
    return EXIT_RUNTIME if problems else EXIT_OK


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        _print_errors(args.scenario, exc)
        return EXIT_INVALID
    print(f"{args.scenario}: ok ({scenario.template.variant.value}, {len(scenario.paths)} paths, "
          f"{len(scenario.flows)} flows)")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        a = parse_report(Path(args.report_a).read_text(encoding="utf-8"))
        b = parse_report(Path(args.report_b).read_text(encoding="utf-8"))
        deltas = compare(a, b)
    except (OSError, ValueError) as exc:
        print(f"compare: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc, ComparisonError) else EXIT_RUNTIME
    sys.stdout.write(format_comparison(deltas, changed_only=not args.all))
    return EXIT_OK


def _sweep_one(path: str, seed: Optional[int], fmt: str):
    try:
        scenario = load_scenario(path)
    except ScenarioError as exc:
        return path, EXIT_INVALID, str(exc)
    try:
        report = run_scenario(scenario, seed=seed)
    except Exception as exc:  # noqa: BLE001
        return path, EXIT_RUNTIME, str(exc)
    return path, EXIT_OK, emit_report(report, fmt)


def cmd_sweep(args) -> int:
    files = sorted(str(p) for p in Path(args.directory).glob("*.scn"))
    if not files:
        print(f"sweep: no *.scn files in {args.directory}", file=sys.stderr)
        return EXIT_INVALID
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, files, [args.seed] * len(files), [args.format] * len(files)))
    else:
        results = [_sweep_one(f, args.seed, args.format) for f in files]
    worst = EXIT_OK
    for path, code, text in results:
        print(f"## {path}")
        if code == EXIT_OK:
            sys.stdout.write(text)
        else:
            print(text, file=sys.stderr)
        worst = max(worst, code)
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="preof5g", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one scenario file")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--format", choices=("table", "kv"), default="table")
    run.add_argument("--trace", action="store_true", help="per-packet hop/header log on stderr")
    run.add_argument("-o", "--output", help="write the report here instead of stdout")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("scenario")
    val.set_defaults(func=cmd_validate)

    cmp_ = sub.add_parser("compare", help="diff two kv reports (b - a)")
    cmp_.add_argument("report_a")
    cmp_.add_argument("report_b")
    cmp_.add_argument("--all", action="store_true", help="also list unchanged metrics")
    cmp_.set_defaults(func=cmd_compare)

    sweep = sub.add_parser("sweep", help="run every *.scn file in a directory")
    sweep.add_argument("directory")
    sweep.add_argument("--seed", type=int, default=None)
    sweep.add_argument("--format", choices=("table", "kv"), default="kv")
    sweep.add_argument("-j", "--jobs", type=int, default=1)
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
