"""Command line entry point.

Subcommands:
    risce crb-sweep <config>   CRB sweep, CSV output
    risce mc-mse <config>      Monte Carlo estimator MSE vs CRB, CSV output
    risce synth <config>       dump one channel set + plan to an .npz file

Exit codes: 0 success, 2 config error, 3 identifiability error (every
realization of every row was skipped).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .experiments import (ConfigError, load_config, run_crb_sweep, run_mc_mse,
                          run_synth)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IDENTIFIABILITY = 3


def _add_common(sub):
    sub.add_argument("config", help="path to an INI experiment config")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    sub.add_argument("--threads", type=int, default=1,
                     help="worker threads for Monte Carlo trials")
    sub.add_argument("--out", default=None, help="override the output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risce",
        description="RIS channel estimation experiments: CRB sweeps and "
                    "Monte Carlo estimator runs.")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, text in (("crb-sweep", "average CRBs over channel realizations"),
                       ("mc-mse", "Monte Carlo estimator MSE alongside the CRB"),
                       ("synth", "dump one synthesized channel set and plan")):
        _add_common(subs.add_parser(name, help=text))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output=args.out)
    runner = {"crb-sweep": run_crb_sweep, "mc-mse": run_mc_mse,
              "synth": run_synth}[args.command]
    try:
        result = runner(cfg, threads=args.threads)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    if args.command in ("crb-sweep", "mc-mse"):
        rows = result
        print(f"wrote {cfg.output} ({len(rows)} rows)")
        if sum(r.realizations for r in rows) == 0:
            print("all realizations were skipped (identifiability failures)",
                  file=sys.stderr)
            return EXIT_IDENTIFIABILITY
    else:
        print(f"wrote {cfg.output}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
