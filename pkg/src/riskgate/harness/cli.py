"""Command-line interface: run, baseline, aggregate, validate-config.

Exit codes: 0 on success, 1 for configuration problems, 2 for runtime
failures (placement, IO).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .aggregate import aggregate, emit, load_records
from .config import ConfigError, ExperimentConfig, load_config
from .runner import BatchError, run_batch

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="JSON configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override base_seed")
    parser.add_argument("--workers", type=int, default=1, help="parallel world workers")
    parser.add_argument("--out", default=None, help="override output directory")
    parser.add_argument("--dump-trajectories", action="store_true",
                        help="write per-step vehicle trajectories (JSONL)")
    parser.add_argument("--dump-risk", action="store_true",
                        help="write the per-evaluation risk log (JSONL)")
    parser.add_argument("--no-dump-runs", action="store_true",
                        help="skip writing per-run records (runs.jsonl)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskgate",
        description="Seeded highway batch experiments with risk gatekeepers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the batch described by a config file")
    _add_run_options(run)

    baseline = sub.add_parser("baseline", help="run a fixed-policy baseline batch")
    baseline.add_argument("--policy", required=True, choices=["defensive", "hotshot"])
    _add_run_options(baseline)

    agg = sub.add_parser("aggregate", help="re-aggregate a directory of run records")
    agg.add_argument("--in", dest="input_dir", required=True)
    agg.add_argument("--out", dest="output_dir", required=True)
    agg.add_argument("--bootstrap", type=int, default=None,
                     help="bootstrap resamples for the confidence bands")

    validate = sub.add_parser("validate-config", help="check a config file and exit")
    validate.add_argument("config", help="JSON configuration file")
    return parser


def _execute_batch(config: ExperimentConfig, args: argparse.Namespace) -> int:
    records = run_batch(
        config,
        workers=args.workers,
        dump_trajectories=args.dump_trajectories,
        dump_risk=args.dump_risk,
    )
    stats = aggregate(records)
    out_dir = args.out if args.out is not None else config.output_dir
    written = emit(stats, records, config, out_dir, include_runs=not args.no_dump_runs)
    for path in written:
        print(path)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate-config":
            config = load_config(args.config)
            print(f"ok: {args.config} ({config.mode}, {config.n_worlds} worlds)")
            return EXIT_OK

        if args.command == "aggregate":
            try:
                records = load_records(args.input_dir)
            except FileNotFoundError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_RUNTIME
            if not records:
                print("error: no records found", file=sys.stderr)
                return EXIT_RUNTIME
            stats = aggregate(records, bootstrap=args.bootstrap)
            # Reuse the recorded config when present so the summary echoes it.
            summary = Path(args.input_dir) / "summary.json"
            if summary.exists():
                import json

                from .config import config_from_dict
                config = config_from_dict(json.loads(summary.read_text())["config"])
            else:
                config = ExperimentConfig(n_worlds=len(records), mode="baseline")
            for path in emit(stats, records, config, args.output_dir, include_runs=False):
                print(path)
            return EXIT_OK

        config = load_config(args.config)
        if args.command == "baseline":
            config = dataclasses.replace(
                config,
                mode="baseline",
                n_online=0,
                baseline_policy=args.policy.capitalize(),
            )
        if args.seed is not None:
            config = dataclasses.replace(config, base_seed=args.seed)
        return _execute_batch(config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BatchError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
