"""Command-line interface.

Five subcommands cover the full loop:

* ``lasvad synth``   — generate a synthetic corpus for desk-scale runs
* ``lasvad train``   — train a detector on a manifest + text bank
* ``lasvad infer``   — write per-video predictions from a checkpoint
* ``lasvad eval``    — score a predictions file against ground truth
* ``lasvad curves``  — dump per-video score/label CSVs for plotting

Exit codes: 0 success; 2 configuration or validation problem; 3 data-format
problem; 4 numeric failure during computation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .config import TrainConfig, build_config, read_config_file
from .errors import (
    ConfigurationError,
    FormatError,
    NumericError,
    ValidationError,
)
from .synthetic import SynthConfig, generate_synthetic_corpus
from .training import evaluate, infer, train, write_curves

EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4


def _add_config_flags(parser: argparse.ArgumentParser, config_cls: type) -> None:
    """One optional CLI flag per config field; unset flags fall back to the file."""
    for field in dataclasses.fields(config_cls):
        flag = "--" + field.name.replace("_", "-")
        annotation = str(field.type)
        if "bool" in annotation:
            parser.add_argument(
                flag, dest=field.name, action=argparse.BooleanOptionalAction,
                default=None,
            )
        elif "int" in annotation:
            parser.add_argument(flag, dest=field.name, type=int, default=None)
        elif "float" in annotation:
            parser.add_argument(flag, dest=field.name, type=float, default=None)
        else:
            parser.add_argument(flag, dest=field.name, default=None)


def _gather_config(args: argparse.Namespace, config_cls: type):
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {
        field.name: getattr(args, field.name)
        for field in dataclasses.fields(config_cls)
    }
    return build_config(config_cls, file_values, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lasvad",
        description="Weakly supervised video anomaly detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic corpus")
    synth.add_argument("--config", help="flat key = value config file")
    synth.add_argument("--out", required=True, help="output corpus directory")
    _add_config_flags(synth, SynthConfig)

    train_p = sub.add_parser("train", help="train a detector")
    train_p.add_argument("--config", help="flat key = value config file")
    train_p.add_argument("--manifest", required=True)
    train_p.add_argument("--text-bank", required=True, help="text bank path prefix")
    train_p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(train_p, TrainConfig)

    infer_p = sub.add_parser("infer", help="write predictions from a checkpoint")
    infer_p.add_argument("--checkpoint", required=True)
    infer_p.add_argument("--manifest", required=True)
    infer_p.add_argument("--out", required=True, help="predictions JSON-lines file")
    infer_p.add_argument(
        "--components", help="also dump per-video component assignments here"
    )

    eval_p = sub.add_parser("eval", help="score predictions against ground truth")
    eval_p.add_argument("--predictions", required=True)
    eval_p.add_argument("--manifest", required=True)
    eval_p.add_argument("--report", help="also write the report as JSON here")

    curves_p = sub.add_parser("curves", help="dump per-video score curves as CSV")
    curves_p.add_argument("--predictions", required=True)
    curves_p.add_argument("--manifest", required=True)
    curves_p.add_argument("--out", required=True, help="output directory")

    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "synth":
        config = _gather_config(args, SynthConfig)
        manifest_path, _, _ = generate_synthetic_corpus(config, args.out)
        print(manifest_path)
    elif args.command == "train":
        config = _gather_config(args, TrainConfig)
        checkpoint = train(config, args.manifest, args.text_bank, args.out)
        print(checkpoint)
    elif args.command == "infer":
        out = infer(args.checkpoint, args.manifest, args.out, args.components)
        print(out)
    elif args.command == "eval":
        report = evaluate(args.predictions, args.manifest)
        print(report.render())
        if args.report:
            with open(args.report, "w", encoding="utf-8") as fh:
                json.dump(report.as_dict(), fh, indent=2)
                fh.write("\n")
    elif args.command == "curves":
        for path in write_curves(args.predictions, args.manifest, args.out):
            print(path)
    return 0


def main() -> None:
    try:
        sys.exit(run())
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(EXIT_FORMAT)
    except (ConfigurationError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(EXIT_NUMERIC)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


if __name__ == "__main__":
    main()
