"""Command line entry point: ``heatlab`` or ``python -m heatlab``.

Exit codes: 0 all hard checks pass, 1 a hard check failed, 2 config error,
3 numeric error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from .scenario import ConfigError, bundled_config, emit_report, load_scenarios, run_scenario

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heatlab",
                                description="Run heat kernel verification scenarios.")
    p.add_argument("--config", help="YAML scenario file (default: bundled scenarios)")
    p.add_argument("--out-dir", default="heatlab-out", help="directory for reports")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--scenario", action="append",
                   help="scenario name to run (repeatable; default: all)")
    p.add_argument("--list-scenarios", action="store_true",
                   help="print scenario names and pipelines, then exit")
    p.add_argument("--hard-all", action="store_true", help="treat soft checks as hard")
    p.add_argument("--format", choices=("json", "csv-bundle"), default="json")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _thread_limit():
    raw = os.environ.get("HEATLAB_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"HEATLAB_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("HEATLAB_THREADS must be at least 1")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _thread_limit()
        scenarios = load_scenarios(args.config or bundled_config())
        if args.list_scenarios:
            for sc in scenarios:
                print(f"{sc.name}: {', '.join(sc.pipeline)}")
            return EXIT_OK
        if args.scenario:
            known = {s.name for s in scenarios}
            missing = [n for n in args.scenario if n not in known]
            if missing:
                raise ConfigError(f"unknown scenario(s) {missing}; known: {sorted(known)}")
            scenarios = [s for s in scenarios if s.name in args.scenario]
        code = EXIT_OK
        with threadpool_limits(limits=threads):
            for sc in scenarios:
                report = run_scenario(sc, seed=args.seed, hard_all=args.hard_all)
                emit_report(report, args.out_dir, args.format)
                for rec in report.records:
                    tag = "soft" if rec.soft else "hard"
                    print(f"{sc.name:16s} {rec.name:22s} {tag} {rec.status}"
                          + (f"  ({rec.message})" if rec.message else ""))
                code = max(code, report.exit_code)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
