"""Command-line front end.

Verbs: run, batch, analyze, oracle, report.
Exit codes: 0 success, 1 usage, 2 config, 3 runtime, 4 acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import (
    manifest_from_sections,
    read_config_file,
    session_config_from_sections,
)
from .errors import ConfigError, EmptyCohortError, PhaseloopError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_ACCEPTANCE = 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="phaseloop", description=__doc__)
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    parser.add_argument("--parallel", type=int, default=1, help="worker processes for batch")
    parser.add_argument("--config", type=Path, default=None, help="configuration file")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run one session from a config file")
    p_run.add_argument("config_path", nargs="?", type=Path, default=None)
    p_run.add_argument("--rest-signals", choices=("summary", "csv"), default="csv")

    p_batch = sub.add_parser("batch", help="run a cohort from a manifest")
    p_batch.add_argument("manifest_path", type=Path)

    p_an = sub.add_parser("analyze", help="analyze an executed cohort directory")
    p_an.add_argument("cohort_dir", type=Path)
    p_an.add_argument("--n-perm", type=int, default=2000)

    p_or = sub.add_parser("oracle", help="print reference values for a test suite")
    p_or.add_argument("suite", help="ar | bandit | imcoh | permutation | wilcoxon | circular | ols")

    p_rep = sub.add_parser("report", help="summarize an analyzed cohort; exit 4 on failures")
    p_rep.add_argument("cohort_dir", type=Path)
    return parser


def cmd_run(args) -> int:
    from .persist import save_session
    from .session import run_session

    path = args.config_path or args.config
    if path is None:
        raise ConfigError("run needs a config file (positional or --config)")
    sections = read_config_file(path)
    cfg = session_config_from_sections(sections)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    log = run_session(cfg, keep_signals=(args.rest_signals == "csv"))
    sdir = save_session(log, args.out, rest_signals=args.rest_signals)
    print(f"session written to {sdir}")
    print(f"  learned_bin={log.learned_bin} planted_bin={log.planted_optimal_bin} "
          f"snr={log.rest_baseline.snr_db:.2f} dB trials={len(log.trials)}")
    return EXIT_OK


def cmd_batch(args) -> int:
    from .cohort import run_batch

    sections = read_config_file(args.manifest_path)
    manifest = manifest_from_sections(sections)
    if args.seed is not None:
        from dataclasses import replace

        manifest = replace(manifest, master_seed=args.seed)
    out = run_batch(manifest, args.out, parallelism=max(1, args.parallel))
    print(f"cohort written to {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .cohort import analyze_cohort

    bundle = analyze_cohort(args.cohort_dir, n_perm=args.n_perm)
    for name, path in bundle.paths.items():
        print(f"{name}: {path}")
    for check in bundle.summary["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"[{status}] {check['name']} = {check['value']}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .errors import ParameterError
    from .oracles import format_suite, run_suite

    try:
        result = run_suite(args.suite)
    except ParameterError as exc:
        raise _UsageError(str(exc)) from exc
    print(format_suite(args.suite, result))
    return EXIT_OK


def cmd_report(args) -> int:
    report_path = Path(args.cohort_dir) / "report.json"
    if not report_path.exists():
        from .cohort import analyze_cohort

        analyze_cohort(args.cohort_dir)
    with open(report_path) as fh:
        summary = json.load(fh)
    failures = 0
    for check in summary["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        failures += 0 if check["passed"] else 1
        print(f"[{status}] {check['name']} = {check['value']}")
    print(f"sessions retained: {summary['n_sessions_retained']}/{summary['n_sessions_total']}")
    return EXIT_OK if failures == 0 else EXIT_ACCEPTANCE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.verb == "run":
            return cmd_run(args)
        if args.verb == "batch":
            return cmd_batch(args)
        if args.verb == "analyze":
            return cmd_analyze(args)
        if args.verb == "oracle":
            return cmd_oracle(args)
        if args.verb == "report":
            return cmd_report(args)
        raise _UsageError(f"unknown verb {args.verb!r}")
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmptyCohortError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except PhaseloopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
