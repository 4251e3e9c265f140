"""Command line interface: run experiments, build tables, render plots."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .configio import load_config
from .errors import CdfilterError, ConfigError, StreamError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _add_common(parser) -> None:
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--seed", type=int, default=None, help="override [run] seed")
    parser.add_argument("--out", default=None, help="override [run] out directory")
    parser.add_argument("--reps", type=int, default=None,
                        help="override [run] replications")
    parser.add_argument("--threads", type=int, default=None,
                        help="override [run] threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdfilter",
        description="Streaming Bayesian inference benchmarks: filtered "
                    "samplers against exact sequential Gibbs baselines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment config")
    _add_common(run)

    table = sub.add_parser("table", help="aggregate runs into a table CSV")
    table.add_argument("run_dirs", nargs="+", help="completed run directories")
    table.add_argument("--table", required=True, dest="table_id",
                       help="table id (tab1, tab2, tab3, tab5..tab9)")
    table.add_argument("--out", default="-", help="output CSV path (- for stdout)")

    plot = sub.add_parser("plot", help="render an SVG plot")
    plot.add_argument("source", help="metrics.csv (accuracy) or rep dir (density)")
    plot.add_argument("--kind", choices=("accuracy", "density"), default="accuracy")
    plot.add_argument("--param", default="beta@1",
                      help="parameter for density plots, e.g. beta@1 or sigma2")
    plot.add_argument("--out", required=True, help="output SVG path")

    sim = sub.add_parser("simulate", help="emit a design's data stream as CSV")
    _add_common(sim)
    sim.add_argument("--csv", required=True, help="output CSV path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            from .runner import run_experiment

            cfg = load_config(args.config, {
                "seed": args.seed, "out": args.out,
                "replications": args.reps, "threads": args.threads,
            })
            manifest = run_experiment(cfg)
            print(f"wrote {cfg.out} (config {manifest['config_hash']})")
            return EXIT_OK
        if args.command == "table":
            from .runner import make_table

            header, rows = make_table(args.run_dirs, args.table_id)
            if args.out == "-":
                writer = csv.writer(sys.stdout)
                writer.writerow(header)
                writer.writerows(rows)
            else:
                with open(args.out, "w", newline="", encoding="utf-8") as fh:
                    writer = csv.writer(fh)
                    writer.writerow(header)
                    writer.writerows(rows)
                print(f"wrote {args.out}")
            return EXIT_OK
        if args.command == "plot":
            from .runner import plot_accuracy, plot_density

            if args.kind == "accuracy":
                plot_accuracy(args.source, args.out)
            else:
                plot_density(args.source, args.param, args.out)
            print(f"wrote {args.out}")
            return EXIT_OK
        if args.command == "simulate":
            from .runner import simulate_csv

            cfg = load_config(args.config, {
                "seed": args.seed, "replications": args.reps,
            })
            count = simulate_csv(cfg, args.csv)
            print(f"wrote {args.csv} ({count} rows)")
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StreamError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except CdfilterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
