"""Command-line driver.

Exit codes: 0 when every declared check passed, 1 when any check failed,
2 when the pipeline itself could not run.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .pipeline import PipelineError, Report, apply_overrides, emit_report, load_report, run_problem
from .problem import BUILTINS, ProblemError, builtin, load

ENV_REPORT_DIR = "DIFFPERT_REPORT_DIR"
EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _ladder(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if len(values) < 3 or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("the eps ladder needs at least three positive values")
    return values


def _common(p: argparse.ArgumentParser):
    p.add_argument("--eps-ladder", type=_ladder, help="comma-separated eps values, e.g. 0.1,0.05,0.025")
    p.add_argument("--tol", type=float, help="integration tolerance")
    p.add_argument("--ansatz-depth", type=int, choices=range(0, 4), help="auto-extension depth of the ansatz")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.add_argument("--out", help=f"report directory (default: ${ENV_REPORT_DIR} or ./reports)")
    p.add_argument("--no-write", action="store_true", help="do not write report files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffpert", description="Perturbation analysis with differential forms.")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="run the full pipeline on a problem file")
    a.add_argument("file")
    _common(a)

    b = sub.add_parser("builtin", help="run a built-in case")
    b.add_argument("name", nargs="?", help=f"one of: {', '.join(BUILTINS)}")
    b.add_argument("--all", action="store_true", help="run every built-in case")
    _common(b)

    v = sub.add_parser("validate", help="check a problem file without solving it")
    v.add_argument("file")

    r = sub.add_parser("report", help="summarize a written report directory")
    r.add_argument("dir")
    r.add_argument("--json", action="store_true")
    return parser


def _report_root(args) -> Path:
    return Path(args.out or os.environ.get(ENV_REPORT_DIR) or "reports")


def _summary(r: Report) -> str:
    lines = [f"{r.case}: {'PASS' if r.passed else 'FAIL'}"]
    for c in r.checks:
        lines.append(f"  {'ok  ' if c.passed else 'FAIL'} {c.name} = {c.value:.6g} (threshold {c.threshold:.6g})")
    return "\n".join(lines)


def _run(problems, args) -> int:
    reports = []
    for p in problems:
        p = apply_overrides(p, eps_ladder=args.eps_ladder, tol=args.tol, ansatz_depth=args.ansatz_depth)
        r = run_problem(p)
        if not args.no_write:
            emit_report(r, _report_root(args) / r.case)
        reports.append(r)
    if args.json:
        payload = [r.to_dict() for r in reports]
        print(json.dumps(payload[0] if len(payload) == 1 else payload, indent=2))
    else:
        print("\n".join(_summary(r) for r in reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            return _run([load(args.file)], args)
        if args.command == "builtin":
            if args.all == (args.name is not None):
                print("give either a case name or --all", file=sys.stderr)
                return EXIT_ERROR
            names = BUILTINS if args.all else [args.name]
            return _run([builtin(n) for n in names], args)
        if args.command == "validate":
            p = load(args.file)
            print(f"{p.name}: problem file is valid")
            return EXIT_OK
        if args.command == "report":
            r = load_report(args.dir)
            print(r.to_json() if args.json else _summary(r), end="\n" if not args.json else "")
            return EXIT_OK if r.passed else EXIT_FAIL
    except (PipelineError, ProblemError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
