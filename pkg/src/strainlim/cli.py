"""Command line entry point: ``strainlim <experiment> [--config PATH] [--out DIR] [--threads N]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

COMMANDS = ("validate", "n-sweep", "crack", "infsup", "checkerboard")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strainlim", description="Run a strain-limiting elasticity study.")
    parser.add_argument("experiment", choices=COMMANDS)
    parser.add_argument("--config", metavar="PATH", help="INI file; the section named after the experiment is read")
    parser.add_argument("--out", metavar="DIR", help="output directory for CSV and VTK files")
    parser.add_argument("--threads", metavar="N", type=int, default=None,
                        help="thread count for the BLAS/OpenMP backends")
    parser.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override one configuration key (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(pairs: list[str]) -> dict:
    out = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            raise SystemExit("--threads must be positive")
        # must happen before numpy loads its BLAS
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    from .experiments import RUNNERS, load_config, make_config  # noqa: PLC0415

    name = args.experiment.replace("-", "_")
    cfg = load_config(args.config, name)
    extra = _overrides(args.set)
    if args.out:
        extra["out"] = args.out
    if extra:
        base = {k: v for k, v in vars(cfg).items() if k != "experiment"}
        base.update(extra)
        cfg = make_config(name, base)
    rows, ok = RUNNERS[name](cfg)
    print(f"{args.experiment}: {len(rows)} rows written to {cfg.out}, all converged: {ok}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
