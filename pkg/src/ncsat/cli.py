"""Command-line entry point.

    ncsat sweep   --config exp.yaml [--seed N] [--runs N] [--out DIR] [--workers N]
    ncsat analyze --config exp.yaml [--out DIR]
    ncsat trace   [--config exp.yaml] --esn0 DB --slots N [--seed N] [--out DIR]
    ncsat matrix  --config exp.yaml --esn0 DB [--modulation BPSK] [--out DIR]
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .channel import OPEN_AREA_GEO, TraceParseError, generate_trace
from .experiment import (ChannelConfig, ConfigError, ExperimentConfig, analyze_delay,
                         dump_transition_matrix, load_config, run_experiment, write_trace)
from .phy import Modulation
from .simulator import TraceExhaustedError

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncsat", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("--version", action="version", version=f"ncsat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", type=Path, required=config_required, help="YAML experiment file")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides sim.seed)")

    p = sub.add_parser("sweep", help="Monte-Carlo sweep, writes sweep.csv and manifest.txt")
    common(p)
    p.add_argument("--runs", type=int, help="runs per grid point (overrides sim.n_runs)")
    p.add_argument("--workers", type=int, help="worker processes (overrides sim.workers)")

    p = sub.add_parser("analyze", help="analytic expected delay, writes delay_analytic.csv")
    common(p)

    p = sub.add_parser("trace", help="generate an LMS trace, writes trace.csv")
    common(p, config_required=False)
    p.add_argument("--esn0", type=float, required=True, help="mean Es/N0 in dB")
    p.add_argument("--slots", type=int, required=True, help="number of slots")

    p = sub.add_parser("matrix", help="dump the one-step transition matrix as row,col,prob")
    common(p)
    p.add_argument("--esn0", type=float, required=True, help="Es/N0 in dB")
    p.add_argument("--modulation", default="BPSK", help="BPSK, QPSK, 8PSK or 16QAM")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    sim = cfg.sim
    if args.seed is not None:
        sim = replace(sim, seed=args.seed)
    if getattr(args, "runs", None) is not None:
        sim = replace(sim, n_runs=args.runs)
    if getattr(args, "workers", None) is not None:
        sim = replace(sim, workers=args.workers)
    out = args.out if args.out is not None else cfg.output_dir
    return replace(cfg, sim=sim, output_dir=out)


def _trace(args) -> Path:
    channel = load_config(args.config).channel if args.config else ChannelConfig()
    params = replace(channel.lms if channel.kind == "lms" else OPEN_AREA_GEO,
                     slot_duration=channel.slot_duration)
    if args.slots < 1:
        raise ValueError("--slots must be >= 1")
    trace = generate_trace(params.with_mean(args.esn0), args.slots,
                           args.seed if args.seed is not None else 0)
    out = args.out if args.out is not None else Path(".")
    return write_trace(trace, out / "trace.csv")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "trace":
            written = [_trace(args)]
        else:
            cfg = _apply_overrides(load_config(args.config), args)
            if args.command == "sweep":
                written = list(run_experiment(cfg).values())
            elif args.command == "analyze":
                written = [analyze_delay(cfg)]
            else:
                written = [dump_transition_matrix(cfg, args.esn0, Modulation.from_name(args.modulation))]
    except ConfigError as exc:
        print(f"ncsat: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, TraceParseError, TraceExhaustedError) as exc:
        print(f"ncsat: error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
