"""Batch command line: ``hdbf run --config FILE [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from hdbf.errors import ConfigError, HDBFError
from hdbf.harness import AXES, TESTS, load_config, parse_values, run_sweep, emit_outputs

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdbf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment or a sweep and write CSV (+ SVG)")
    run.add_argument("--config", required=True, help="flat key = value experiment file")
    run.add_argument("--axis", choices=AXES)
    run.add_argument("--values", help="comma-separated sweep values")
    run.add_argument("--tests", help=f"comma-separated subset of {','.join(TESTS)}")
    run.add_argument("--reps", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", help="worker processes, or 'auto'")
    run.add_argument("--out", default="results")
    run.add_argument("--plot", action="store_true", help="also write mdr/vr/rate SVG charts")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(args) -> dict:
    out = {}
    if args.tests is not None:
        out["tests"] = tuple(t.strip() for t in args.tests.split(",") if t.strip())
    if args.reps is not None:
        out["replications"] = args.reps
    if args.seed is not None:
        out["master_seed"] = args.seed
    if args.threads is not None:
        try:
            out["threads"] = None if args.threads == "auto" else int(args.threads)
        except ValueError as exc:
            raise ConfigError(f"--threads must be an integer or 'auto', got {args.threads!r}") from exc
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        try:
            cfg, axis, values = load_config(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from exc
        cfg = cfg.replace(**_overrides(args))
        if args.axis is not None:
            axis = args.axis
        if args.values is not None:
            values = parse_values(args.values)
        if axis is not None and not values:
            raise ConfigError(f"axis {axis!r} given without --values")
        if axis is None and values:
            raise ConfigError("--values given without an axis")
    except ConfigError as exc:
        print(f"hdbf: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        rows = run_sweep(cfg, axis, values)
    except HDBFError as exc:
        print(f"hdbf: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    try:
        paths = emit_outputs(rows, args.out, plot=args.plot, axis=axis, config=cfg)
    except OSError as exc:
        print(f"hdbf: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
