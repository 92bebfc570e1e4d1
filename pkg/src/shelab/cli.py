"""Command-line entry point.

    shelab <command> --config PATH [--out DIR] [--seed U64] [--jobs N]

Exit status: 0 success, 1 invalid config, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import COMMANDS, load_config
from .runner import run
from .solver import ConfigError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shelab", description="Colored-noise stochastic heat "
                                "equation experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, metavar="PATH", help="YAML or JSON config file")
    p.add_argument("--out", metavar="DIR", help="override output_dir")
    p.add_argument("--seed", type=int, metavar="U64", help="override master_seed")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed: must be an unsigned 64-bit integer")
        if args.jobs < 1:
            raise ConfigError("--jobs: must be >= 1")
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if cfg.command != args.command:
            raise ConfigError(f"command: config says {cfg.command!r} but "
                              f"{args.command!r} was requested")
    except ConfigError as exc:
        print(f"shelab: invalid config: {exc}", file=sys.stderr)
        return 1
    status = run(cfg, jobs=args.jobs)
    where = cfg.run_dir()
    if status == 0:
        print(where)
    else:
        print(f"shelab: {args.command} failed; see {where}/FAILED", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
