"""Command-line entry point.

Subcommands: trace-gen, train, bench, timing, eval.  Exit codes: 0 success,
2 configuration error, 3 I/O error, 4 numeric failure, 1 anything else.
The environment variable CBFLAB_OUT_DIR overrides the configured output
directory.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .channel import TraceFormatError


def _add_config_arg(sub):
    sub.add_argument("config", help="path to a key = value config file")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cbflab",
        description="Multi-cell coordinated beamforming laboratory",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("trace-gen", help="generate a channel trace file")
    _add_config_arg(p)
    p.add_argument("out", help="output trace path")
    p.add_argument("--slots", type=int, default=None, help="override num_slots")

    p = subs.add_parser("train", help="run the multi-agent training loop")
    _add_config_arg(p)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = subs.add_parser("bench", help="compare schemes on one channel window")
    _add_config_arg(p)
    p.add_argument("--schemes", default=None, help="comma-separated scheme list")
    p.add_argument("--checkpoint", default=None, help="trained run checkpoint")
    p.add_argument(
        "--mslnr-checkpoint", default=None, help="trained power-only checkpoint"
    )

    p = subs.add_parser("timing", help="time the decision path against solvers")
    _add_config_arg(p)
    p.add_argument("--repeats", type=int, default=30)

    p = subs.add_parser("eval", help="evaluate a trained checkpoint")
    _add_config_arg(p)
    p.add_argument("--checkpoint", required=True)
    return parser


def run(args):
    cfg = harness.parse_config(args.config)
    if args.command == "trace-gen":
        path = harness.generate_trace_file(cfg, args.out, num_slots=args.slots)
        print(f"trace written to {path}")
    elif args.command == "train":
        summary = harness.run_train(cfg, resume_from=args.resume)
        print(json.dumps(summary, indent=2))
    elif args.command == "bench":
        schemes = (
            tuple(s.strip() for s in args.schemes.split(",") if s.strip())
            if args.schemes
            else None
        )
        out = harness.run_benchmark(
            cfg,
            schemes=schemes,
            checkpoint=args.checkpoint,
            mslnr_checkpoint=args.mslnr_checkpoint,
        )
        print(json.dumps(out["results"], indent=2))
    elif args.command == "timing":
        report = harness.run_timing(cfg, repeats=args.repeats)
        print(json.dumps(report, indent=2))
    elif args.command == "eval":
        out = harness.run_benchmark(cfg, schemes=("ddcbf",), checkpoint=args.checkpoint)
        print(json.dumps(out["results"], indent=2))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TraceFormatError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except ArithmeticError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # pragma: no cover - catch-all for the CLI
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
