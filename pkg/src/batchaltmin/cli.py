"""Command-line entry point.

    batchaltmin {step-map,h-curve,expectation,recovery,all} [--config PATH]
                [--seed U64] [--out DIR] [--set KEY=VALUE ...] [field flags]

Exit status: 0 success, 1 an acceptance check failed, 2 usage/config/I/O error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .errors import ConfigError
from .experiments import EXPERIMENTS, coerce_field, default_config, load_config, run_experiment

# flags exposed directly; anything else goes through --set
_FIELD_FLAGS = ("n", "m", "B", "trials", "samples", "table_points", "workers", "thetas",
                "etas", "ns", "ratios", "Bs", "cov_lead", "max_iters", "residual_tol",
                "success_tol", "min_success")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="batchaltmin",
        description="Batched alternating-minimization phase retrieval experiments.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in EXPERIMENTS + ("all",):
        p = sub.add_parser(name, help=f"run the {name} experiment" if name != "all"
                           else "run every experiment into subdirectories of --out")
        p.add_argument("--config", metavar="PATH", help="flat key = value config file")
        p.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", metavar="DIR", default="results", help="output directory")
        p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                       help="override any config field (repeatable)")
        for field in _FIELD_FLAGS:
            p.add_argument(f"--{field.replace('_', '-')}", dest=f"f_{field}", metavar="VALUE")
        p.add_argument("--timing", action="store_true",
                       help="record wall time in recovery.csv (not reproducible)")
    return parser


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _overrides(args) -> dict:
    values = load_config(args.config) if args.config else {}
    for field in _FIELD_FLAGS:
        raw = getattr(args, f"f_{field}")
        if raw is not None:
            values[field] = coerce_field(field, raw)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        values[key.strip()] = coerce_field(key.strip(), val)
    if args.seed is not None:
        values["seed"] = args.seed
    if args.timing:
        values["timing"] = True
    values.pop("experiment", None)
    return values


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = _overrides(args)
        names = EXPERIMENTS if args.command == "all" else (args.command,)
        passed = True
        for name in names:
            out = os.path.join(args.out, name) if args.command == "all" else args.out
            cfg = default_config(name, **{**values, "out": out})
            result = run_experiment(cfg)
            status = "pass" if result.passed else "FAIL"
            print(f"{name}: {status} -> {out}")
            passed &= result.passed
    except (ConfigError, TypeError) as exc:
        print(f"batchaltmin: configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"batchaltmin: I/O error: {exc}", file=sys.stderr)
        return 2
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
