"""Command-line entry point: run, sweep and compare experiments, or serve the aggregation API."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from fed_dpgan.config import get_settings
from fed_dpgan.errors import ConfigError, ExperimentError, FedDPGANError
from fed_dpgan.schemas import ExperimentConfig
from fed_dpgan.services.experiment import (
    load_config,
    output_dir,
    override,
    parse_config,
    run_experiment,
    sweep,
)
from fed_dpgan.services.reports import compare_runs, load_report, write_comparison


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    if args.seed is not None:
        cfg = override(cfg, "seed", args.seed)
    if args.out is not None:
        cfg = override(cfg, "output_path", args.out)
    return cfg


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    report = run_experiment(cfg)
    print(f"{report.label}: final accuracy {report.final_accuracy:.4f} -> {output_dir(cfg)}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load(args)
    values = [_parse_value(v.strip()) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("no values to sweep", args.param)
    for value, report in zip(values, sweep(cfg, args.param, values)):
        print(f"{args.param}={value}: final accuracy {report.final_accuracy:.4f}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    table = compare_runs([load_report(path) for path in args.reports])
    for label in table.labels:
        print(f"{label}\t{table.final_accuracy[label]:.4f}\t{table.deltas[label]:+.4f}")
    if args.out:
        write_comparison(table, Path(args.out))
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("fed_dpgan.api.main:app", host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fed-dpgan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_args(p: argparse.ArgumentParser, config_required: bool) -> None:
        p.add_argument(
            "config",
            nargs=None if config_required else "?",
            help="JSON experiment document (empty means all defaults)",
        )
        p.add_argument("--seed", type=int, default=None, help="Override the master seed")
        p.add_argument("--out", default=None, help="Output directory")

    run = sub.add_parser("run", help="Run one experiment")
    experiment_args(run, config_required=False)
    run.set_defaults(handler=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="Run one experiment per value of a config key")
    experiment_args(sweep_p, config_required=True)
    sweep_p.add_argument("--param", required=True, help="Dotted config key, e.g. privacy.sigma_n")
    sweep_p.add_argument("--values", required=True, help="Comma-separated JSON values")
    sweep_p.set_defaults(handler=_cmd_sweep)

    compare = sub.add_parser("compare", help="Compare finished runs")
    compare.add_argument("reports", nargs="+", help="summary.json files or run directories")
    compare.add_argument("--out", default=None, help="Write the aligned table as CSV")
    compare.set_defaults(handler=_cmd_compare)

    serve = sub.add_parser("serve", help="Start the aggregation API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(handler=_cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=get_settings().log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"error [config]: {e}", file=sys.stderr)
        return 2
    except ExperimentError as e:
        print(f"error [{e.stage}]: {e.message}", file=sys.stderr)
        return 1
    except FedDPGANError as e:
        print(f"error [{args.command}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
