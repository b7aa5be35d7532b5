"""Command-line entry point.

    pcelab <experiment> --config PATH [--seed N] [--out DIR] [--override key=value ...]
    pcelab report INPUT [INPUT ...] [--out DIR]

Exit codes: 0 success, 2 config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import RunFailure, ValidationFailed, run
from .report import SchemaError, format_report, report

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcelab", description="Multi-task RL pre-training and fine-tuning lab")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        e = sub.add_parser(name, help=f"run the {name} experiment")
        e.add_argument("--config", required=True, help="JSON config file")
        e.add_argument("--seed", type=int, help="master seed; replaces any seed list in the config")
        e.add_argument("--out", help="output directory")
        e.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="set a config field; dotted keys reach nested fields; repeatable")
    r = sub.add_parser("report", help="summarize run directories or CSV files")
    r.add_argument("inputs", nargs="*")
    r.add_argument("--out", help="directory for summary CSVs")
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    if args.command == "report":
        try:
            res = report(args.inputs, args.out)
        except SchemaError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        print(format_report(res))
        return EXIT_OK
    try:
        cfg = load_config(args.command, args.config, seed=args.seed, out=args.out, overrides=args.override)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        files = run(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunFailure, ValidationFailed) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - anything else is still a runtime failure
        logging.getLogger(__name__).exception("unexpected failure")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {len(files)} file(s) and metadata.json to {cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
