"""Command-line entry point.

Subcommands: generate (datasets), train (all models), eval (encoding or
prediction metrics), sweep (device scalability).  Failures print a single
machine-parsable line `error:<slug>: message` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from . import __version__, config, simkit
from .errors import ConfigurationError, TrainingDiverged


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="path to a key=value config file")
    common.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    common.add_argument("--out", default="out", help="run directory for artifacts (default ./out)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (results are identical for any value)")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hjpc", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    common = _common_flags()
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="simulate and store the state-trajectory datasets")
    sub.add_parser("train", parents=[common], help="train the hierarchical model and all baselines")
    p_eval = sub.add_parser("eval", parents=[common], help="evaluate trained models on the held-out set")
    p_eval.add_argument("--which", choices=("encoding", "prediction"), required=True)
    p_eval.add_argument("--methods", default=None, help="comma-separated method subset")
    p_sweep = sub.add_parser("sweep", parents=[common], help="device-count scalability sweep over the SNR grid")
    p_sweep.add_argument("--methods", default=None, help="comma-separated method subset")
    return parser


def _fail(slug: str, message) -> int:
    print(f"error:{slug}: {message}", file=sys.stderr)
    return 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config.load_config(args.config)
        config.apply_overrides(cfg, args.overrides)
        if args.seed < 0:
            raise ConfigurationError("--seed must be non-negative")
        if args.jobs < 1:
            raise ConfigurationError("--jobs must be at least 1")
        os.makedirs(args.out, exist_ok=True)
        methods = None
        if getattr(args, "methods", None):
            methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        if args.command == "generate":
            simkit.run_generate(cfg, args.seed, args.out, args.jobs)
        elif args.command == "train":
            simkit.run_train(cfg, args.seed, args.out, args.jobs)
        elif args.command == "eval":
            simkit.run_eval(cfg, args.seed, args.out, args.jobs, which=args.which, methods=methods)
        elif args.command == "sweep":
            _, _, monotone_ok = simkit.run_sweep(cfg, args.seed, args.out, args.jobs, methods=methods)
            if not monotone_ok:
                print("error:monotonicity: supported device counts are not monotone in SNR", file=sys.stderr)
                return 3
    except ConfigurationError as exc:
        return _fail("config", exc)
    except TrainingDiverged as exc:
        return _fail("training-diverged", exc)
    except FileNotFoundError as exc:
        return _fail("io", exc)
    except OSError as exc:
        return _fail("io", exc)
    except ValueError as exc:
        return _fail("usage", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
