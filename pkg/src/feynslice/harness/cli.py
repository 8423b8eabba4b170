"""Command line entry point.

    feynslice converge CONFIG [--out FILE] [--check] [--deterministic]
    feynslice stability CONFIG ...
    feynslice consistency CONFIG ...
    feynslice curvature-check CONFIG ...
    feynslice kernel-dump CONFIG --t T --out FILE

Exit status: 0 success, 2 bad config, 3 numerical failure, 4 a ``--check``
tolerance was violated.
"""
from __future__ import annotations

import argparse
import logging
import sys

from ..errors import NumericalError
from ..propagator import assemble_slice, dump_kernel
from .checks import CHECKS, load_expectations
from .config import ConfigError, parse_config
from .experiments import EXPERIMENTS
from .report import to_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("feynslice")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="feynslice", description="Time-sliced propagator experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--out", help="CSV path (default: stdout)")
        p.add_argument("--check", action="store_true", help="apply the frozen tolerances; exit 4 on failure")
        p.add_argument("--expectations", help="tolerance file (default: the packaged one)")
        p.add_argument("--deterministic", action="store_true",
                       help="write 0 for runtimes so identical runs give identical bytes")
    p = sub.add_parser("kernel-dump")
    p.add_argument("config")
    p.add_argument("--t", type=float, required=True, dest="t")
    p.add_argument("--out", required=True)
    return ap


def _dump(cfg, args):
    hbar = cfg.hbar[0]
    if not args.t > 0:
        raise ConfigError("--t must be positive")
    grid = cfg.manifold.build_grid(cfg.resolution_for(hbar))
    op = assemble_slice(cfg.manifold, cfg.potential, grid, args.t, cfg.cutoff, hbar,
                        steps=cfg.steps, slice_bound=cfg.slice_bound)
    dump_kernel(op, args.out)
    for w in op.warnings:
        log.warning(w)
    log.info("wrote %d x %d kernel to %s", op.size, op.size, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.command == "kernel-dump":
            return _dump(cfg, args)
        report = EXPERIMENTS[args.command](cfg, deterministic=args.deterministic)
        checks = []
        if args.check:
            checks = CHECKS[args.command](report, cfg, load_expectations(args.expectations))
        text = to_csv(report, checks)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:  # precondition violations surfacing from the modules
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    failed = [c for c in checks if not c.ok]
    for c in failed:
        print(f"check failed: {c.name}: {c.detail}", file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
