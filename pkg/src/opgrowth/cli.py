"""``opgrowth`` command line: run, list and check named experiments.

Exit codes: 0 when every encoded criterion passes, 1 when a criterion
fails, 2 for invalid input (unknown experiment, bad spec), 3 when a
resource budget is exceeded and 4 for a degenerate fit window.  Errors are
printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .experiments import (
    EXPERIMENTS,
    ExperimentError,
    ExperimentSpec,
    UnknownExperimentError,
    check_report,
    default_workers,
    run_experiment,
)
from .fitting import FitError
from .ruc import ResourceError

EXIT_FAIL, EXIT_INPUT, EXIT_RESOURCE, EXIT_FIT = 1, 2, 3, 4


def _error(kind: str, message: str, code: int, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


def load_spec(path: Path) -> dict:
    text = Path(path).read_text()
    if Path(path).suffix == ".json":
        return json.loads(text)
    return tomllib.loads(text)


def _print_criteria(records) -> None:
    for c in records:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"[{status}] criterion {c['criterion']:>2} {c['name']}: {c['value']!r} ({c['rule']})")


def cmd_run(args) -> int:
    try:
        raw = load_spec(args.spec)
    except (OSError, ValueError, tomllib.TOMLDecodeError) as exc:
        return _error("invalid_spec", str(exc), EXIT_INPUT)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["output_dir"] = args.out
    try:
        raw["workers"] = args.threads if args.threads is not None else default_workers()
        spec = ExperimentSpec.from_dict(raw)
    except UnknownExperimentError as exc:
        return _error(exc.code, str(exc), EXIT_INPUT, known=sorted(EXPERIMENTS))
    except (ExperimentError, ValueError, TypeError) as exc:
        return _error("invalid_spec", str(exc), EXIT_INPUT)
    try:
        report = run_experiment(spec)
    except ResourceError as exc:
        return _error("resource_budget", str(exc), EXIT_RESOURCE)
    except FitError as exc:
        return _error("fit_window", str(exc), EXIT_FIT)
    except (ExperimentError, ValueError) as exc:
        return _error("invalid_spec", str(exc), EXIT_INPUT)
    _print_criteria(report["criteria"])
    print(f"{report['experiment']}: {report['status']} -> {spec.output_dir / 'report.json'}")
    return 0 if report["status"] == "PASS" else EXIT_FAIL


def cmd_list(args) -> int:
    for name in sorted(EXPERIMENTS):
        print(f"{name:<20} {EXPERIMENTS[name][1]}")
    return 0


def cmd_check(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text())
        records = check_report(report)
    except (OSError, ValueError, ExperimentError) as exc:
        return _error("invalid_report", str(exc), EXIT_INPUT)
    _print_criteria(records)
    return 0 if all(r["passed"] for r in records) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opgrowth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the experiment described by a TOML (or JSON) spec")
    p.add_argument("spec", type=Path)
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $OPGROWTH_THREADS or 1)")
    p.add_argument("--out", type=Path, default=None, help="override the output directory")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("list", help="list the named experiments")
    p.set_defaults(func=cmd_list)
    p = sub.add_parser("check", help="re-check a report.json against the encoded thresholds")
    p.add_argument("report", type=Path)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        return _error("invalid_spec", "--threads must be >= 1", EXIT_INPUT)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
