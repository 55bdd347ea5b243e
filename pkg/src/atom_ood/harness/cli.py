"""Command-line entry point: ``atom-ood <subcommand> [--config PATH] [--seed N] [--out DIR] [--threads N]``."""

import argparse
import sys

from .commands import COMMANDS, EXIT_CONFIG
from .config import load_config


def build_parser():
    parser = argparse.ArgumentParser(prog="atom-ood", description=__doc__.split(":")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "write a synthetic dataset and its manifest",
        "theory": "run the ball-detector theory simulations",
        "train": "train one model from dataset files",
        "eval": "evaluate a checkpoint on saved test sets (four OOD families)",
        "attack": "attack saved OOD data and dump per-sample records",
        "toy": "run the 2-D ablation over all variants and seeds",
        "report": "aggregate evaluation reports into one CSV table",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out,
                                        "threads": args.threads})
        cfg.require(args.command)
        return COMMANDS[args.command](cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
