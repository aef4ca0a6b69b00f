"""Command-line experiment driver.

Verbs: ``validate`` (config check), ``simulate`` (write raw observations),
``run`` (full Monte-Carlo experiment), ``plotdata`` (figure extraction).
Worker count resolves from --workers, then the SBLFUSION_WORKERS environment
variable, then 1.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .experiments import (
    ConfigError,
    SchemaError,
    WORKER_ENV_VAR,
    emit_plot_data,
    load_config,
    run_experiment,
    simulate_observations,
)


def _add_config_arg(parser):
    parser.add_argument("--config", required=True, help="experiment config JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sblfusion",
        description="Multi-sensor SBL detection/localization experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="validate a config file")
    _add_config_arg(p_validate)

    p_simulate = sub.add_parser("simulate", help="write raw observations")
    _add_config_arg(p_simulate)
    p_simulate.add_argument("--output", required=True, help="output directory")
    p_simulate.add_argument("--seed", type=int, default=None,
                            help="override the config seed")

    p_run = sub.add_parser("run", help="run the full experiment")
    _add_config_arg(p_run)
    p_run.add_argument("--output", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_run.add_argument("--workers", type=int, default=None,
                       help="parallel workers (default: $%s or 1)" % WORKER_ENV_VAR)
    p_run.add_argument("--algorithm", choices=["sbl", "nomp"], default=None,
                       help="restrict to one algorithm")

    p_plot = sub.add_parser("plotdata", help="extract plot-ready data")
    p_plot.add_argument("--input", required=True,
                        help="aggregate.csv or an experiment output directory")
    p_plot.add_argument("--figure", required=True,
                        choices=["fig3", "fig4", "fig5"])
    p_plot.add_argument("--output", required=True, help="output CSV path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            config = load_config(args.config)
            print("OK: %s (%d task cells x %d runs)"
                  % (config.name,
                     len(config.algorithms) * len(config.thresholds_db)
                     * len(config.sensor_counts)
                     * (1 if config.time_steps is None else len(config.time_steps)),
                     config.runs))
            return 0
        if args.command == "simulate":
            config = load_config(args.config)
            if args.seed is not None:
                config = replace(config, seed=args.seed)
            written = simulate_observations(config, args.output)
            print("wrote %d observation files to %s" % (len(written), args.output))
            return 0
        if args.command == "run":
            config = load_config(args.config)
            if args.seed is not None:
                config = replace(config, seed=args.seed)
            if args.algorithm is not None:
                if args.algorithm not in config.algorithms:
                    print("error: %r not among config algorithms" % args.algorithm,
                          file=sys.stderr)
                    return 2
                config = replace(config, algorithms=[args.algorithm])
            paths = run_experiment(config, args.output, workers=args.workers)
            for name, path in paths.items():
                print("%s: %s" % (name, path))
            return 0
        if args.command == "plotdata":
            source = Path(args.input)
            if source.is_dir():
                source = source / "aggregate.csv"
            rows = emit_plot_data(source, args.figure, args.output)
            print("wrote %d plot rows to %s" % (len(rows), args.output))
            return 0
    except (ConfigError, SchemaError, FileNotFoundError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
