"""Command-line entry point: train, eval, plot, export-data."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .autodiff import NonFiniteError
from .checkpoint import CheckpointError
from .config import ConfigError, TrainConfig
from .networks import DegenerateEmbeddingError
from .optim import NonFiniteGradientError
from .specreg import DegenerateJacobianError
from .train import NonFiniteLossError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
NUMERIC_ERRORS = (NonFiniteLossError, NonFiniteError, NonFiniteGradientError, DegenerateEmbeddingError,
                  DegenerateJacobianError, FloatingPointError)


def _load_config(path) -> TrainConfig:
    return TrainConfig.load(path) if path else TrainConfig()


def cmd_train(args) -> int:
    from .train import load_state, train

    config = _load_config(args.config)
    resume = load_state(args.resume) if args.resume else None
    state = train(config, args.out, resume=resume)
    print(f"trained {state.step} steps; checkpoint at {Path(args.out) / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .assessment import EVAL_COLUMNS, evaluate
    from .train import load_state

    record = evaluate(load_state(args.checkpoint), args.split, repeats=args.repeats)
    header = ",".join(EVAL_COLUMNS)
    if args.out:
        out = Path(args.out)
        write_header = not out.exists() or out.stat().st_size == 0
        with out.open("a") as fh:
            if write_header:
                fh.write(header + "\n")
            fh.write(record.csv_row() + "\n")
    print(header)
    print(record.csv_row())
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot
    from .train import load_state

    for path in plot(load_state(args.checkpoint), args.out):
        print(path)
    return EXIT_OK


def cmd_export(args) -> int:
    from .data import export_csv
    from .train import make_splits

    config = _load_config(args.config)
    train, val = make_splits(config)
    export_csv(val if args.split == "val" else train, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="structadv", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a GAN on the double spirals")
    p.add_argument("--config", help="key = value config file (defaults if omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--out", help="append the metrics row to this CSV")
    p.add_argument("--repeats", type=int, default=20)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="write SVG scatter plots")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("export-data", help="write a dataset split as CSV")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "val"), default="train")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
