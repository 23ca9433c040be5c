# -*- coding: utf-8 -*-
"""
Command-line entry point.

    deepo-lqt offline --config configs/benchmark.yaml --seed 3 --out artifacts
    deepo-lqt online  --config configs/benchmark.yaml --runs 2
    deepo-lqt oracle  --config configs/scalar.yaml
    deepo-lqt check   --config configs/benchmark.yaml

Exit status is 0 when every acceptance check passed, 2 when one failed and
1 on configuration or runtime errors.
"""
import argparse
import logging
import sys

from .exceptions import DeePOError
from .harness import ExperimentHarness
from .report import emit_summary, exit_code

logger = logging.getLogger("deepo_lqt")

COMMANDS = {
    "offline": "offline DeePO on pre-collected data",
    "online": "online DeePO with the H-block step sweep",
    "oracle": "print Riccati gains and optimal cost for a config",
    "check": "run the full acceptance suite",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="deepo-lqt",
        description="Data-driven policy optimization for linear quadratic tracking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="YAML experiment file")
        cmd.add_argument("--seed", type=int, default=None, help="override the master seed")
        cmd.add_argument("--out", default=None, help="override the artifact directory")
        cmd.add_argument("--runs", type=int, default=None, help="override the run count")
        cmd.add_argument("--log-level", default="INFO",
                         choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def run(args):
    """Execute a parsed command and return the report text and exit status."""
    harness = ExperimentHarness.from_yaml(args.config, seed=args.seed, output=args.out,
                                          runs=args.runs)
    if args.command == "offline":
        artifacts = harness.offline.run()
    elif args.command == "online":
        artifacts = harness.online.run()
    elif args.command == "oracle":
        artifacts = harness.oracle()
    else:
        artifacts = harness.check()
    summary_path = None
    if args.command != "oracle":
        summary_path = harness.config.output / f"{harness.config.name}_{args.command}_summary.txt"
    return emit_summary(artifacts, summary_path), exit_code(artifacts)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        text, status = run(args)
    except DeePOError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    except (ValueError, IndexError) as e:
        logger.error(f"{args.command} failed: invalid input: {e}")
        return 1
    sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
