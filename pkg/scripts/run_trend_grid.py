#!/usr/bin/env python3
"""Run the full material-classification benchmark grid and print the
trend table (three material sets x two angle modes x two models).

Equivalent to `wavemat experiment --grid full`, kept as a script so the
whole study is one command from a fresh checkout:

    python scripts/run_trend_grid.py --out runs/
"""

import argparse
import sys

from wavemat.cli import main


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs", help="output directory (default: runs/)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--config", default=None, help="alternative key-value config file")
    return p.parse_args()


if __name__ == "__main__":
    args = parse_args()
    argv = ["experiment", "--grid", "full", "--out", args.out]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    if args.config is not None:
        argv += ["--config", args.config]
    sys.exit(main(argv))
