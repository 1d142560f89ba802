"""Command-line entry point.

All analysis subcommands take a run config JSON (see README for the
schema) and operate on its output directory; `bench` generates synthetic
benchmark inputs plus a ready-to-run config. Exit codes: 0 success,
1 validation/config problem, 2 stage failure, 3 provider failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .benchgen import NOISE_LEVELS, PRESETS
from .config import load_config
from .errors import ProviderError, StageError, ValidationError
from .pipeline import Pipeline, emit_benchmark

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_STAGE = 2
EXIT_PROVIDER = 3


def _add_config_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="path to the run config JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftlens",
        description="Attribute a metric shift between paired tables to a "
                    "population segment, discounting noisy rows.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, doc in (
        ("run", "execute every stage in order"),
        ("summarize", "pair tables, infer noise labels, export insight summaries"),
        ("synthesize", "run provider feature synthesis from stored insights"),
        ("train", "fit the twin classifiers and emit row probabilities"),
        ("segment", "sweep the penalty grid and extract the segment"),
        ("eval", "score the stored segment against ground truth"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_config_arg(p)

    b = sub.add_parser("bench", help="generate a synthetic benchmark and its run config")
    b.add_argument("out_dir", help="directory for control/test/truth CSVs and config")
    b.add_argument("--preset", choices=PRESETS, default="t1")
    b.add_argument("--noise", choices=NOISE_LEVELS, default="n0")
    b.add_argument("--rows", type=int, default=10000)
    b.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "bench":
            info = emit_benchmark(args.out_dir, preset=args.preset, noise_level=args.noise,
                                  n_rows=args.rows, seed=args.seed)
            print(json.dumps(info, sort_keys=True, indent=2))
            return EXIT_OK

        config = load_config(args.config)
        pipe = Pipeline(config)
        if args.command == "run":
            info = pipe.run()
        elif args.command == "summarize":
            info = pipe.summarize()
        elif args.command == "synthesize":
            info = pipe.synthesize()
        elif args.command == "train":
            info = pipe.train()
        elif args.command == "segment":
            info = pipe.segment()
        else:  # eval
            info = pipe.evaluate()
        print(json.dumps(info, sort_keys=True, indent=2))
        return EXIT_OK
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except StageError as exc:
        print(f"stage error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
