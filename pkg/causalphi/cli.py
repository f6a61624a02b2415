"""Command-line front end: ``phi sweep|table1|trace|measure|graph``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from causalphi.core.config import Settings, default_config_file, load_experiment_config
from causalphi.core.errors import ConfigError, NonConvergenceError, PhiError
from causalphi.core.logging import setup_logging
from causalphi.models.schemas import MEASURES, ExperimentConfig
from causalphi.services.chain_graphs import run_graph_queries
from causalphi.services.distributions import parse_distribution
from causalphi.tasks.runner import (
    format_number,
    measure_distribution,
    run_localmin_trace,
    run_sweep,
    run_table1,
)

log = logging.getLogger("causalphi.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3


def _csv_list(value: str) -> list[str]:
    return [tok.strip() for tok in value.split(",") if tok.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phi",
        description="Integrated-information measures for stationary Markov systems",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
examples:
  # beta sweep of every measure, CSV to output/sweep.csv
  phi sweep --config config/sweep.conf.example

  # N_CIS vs N_CII statistics per latent size
  phi table1 --config config/table1.conf.example --workers 4

  # em local minima along a beta grid
  phi trace --config config/trace.conf.example --out trace.csv

  # measures of one distribution file
  phi measure dist.txt --measures I,SI,G,CII --w-sizes 2,4

  # marginalization and separation queries
  phi graph queries.txt
""",
    )
    parser.add_argument("--log-level", help="logging level (default from PHI_LOG_LEVEL or INFO)")

    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name: str, help_text: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="experiment config file (flat key = value or YAML)")
        sp.add_argument("--out", help="output CSV path")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--force", action="store_true", default=None, help="allow CIS with more than 3 nodes")
        sp.add_argument("--strict", action="store_true", default=None, help="exit 3 when a solver did not converge")
        sp.add_argument("--workers", type=int, help="process pool width")
        return sp

    experiment("sweep", "measures along a beta grid")
    experiment("table1", "N_CIS samples against the N_CII family")
    experiment("trace", "per-restart em outcomes along a beta grid")

    sp_measure = sub.add_parser("measure", help="measures of one distribution file")
    sp_measure.add_argument("path", help="distribution in the 'axes:' text format")
    sp_measure.add_argument("--measures", type=_csv_list, default=["I", "SI", "G", "CII"],
                            help=f"comma-separated subset of {','.join(MEASURES)}")
    sp_measure.add_argument("--w-sizes", type=_csv_list, default=["2"], help="latent sizes for CII")
    sp_measure.add_argument("--restarts", type=int, default=10)
    sp_measure.add_argument("--seed", type=int, default=0)
    sp_measure.add_argument("--renormalize", action="store_true", help="rescale values that do not sum to 1")
    sp_measure.add_argument("--floor", action="store_true", help="clip zero entries to a small epsilon")
    sp_measure.add_argument("--force", action="store_true", help="allow CIS with more than 3 nodes")

    sp_graph = sub.add_parser("graph", help="chain graph marginalization and separation queries")
    sp_graph.add_argument("path", help="query file: edge lines plus marginalize/csep/cgsep directives")
    return parser


def _experiment_config(args: argparse.Namespace, settings: Settings):
    overrides = {
        "seed": args.seed,
        "force": args.force,
        "strict": args.strict,
        "workers": args.workers,
        "output": args.out,
    }
    path = Path(args.config) if args.config else default_config_file(settings)
    log.info("config: %s", path)
    return load_experiment_config(path, overrides)


def _measure_config(args: argparse.Namespace):
    try:
        # preset only satisfies validation; the distribution file fixes n
        return ExperimentConfig(
            preset="paper-n2",
            measures=args.measures,
            w_sizes=[int(m) for m in args.w_sizes],
            restarts=args.restarts,
            seed=args.seed,
            force=True,
        )
    except (ValidationError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings = Settings()
    setup_logging(args.log_level or settings.log_level)

    try:
        if args.command == "graph":
            text = Path(args.path).read_text(encoding="utf-8")
            for line in run_graph_queries(text):
                print(line)
        elif args.command == "measure":
            config = _measure_config(args)
            text = Path(args.path).read_text(encoding="utf-8")
            n = parse_distribution(text, renormalize=args.renormalize, floor=args.floor).space.n
            if "CIS" in config.measures and n > 3 and not args.force:
                raise ConfigError(
                    "CIS requested with n > 3: very time consuming to calculate; pass --force to run anyway"
                )
            for column, value, converged in measure_distribution(text, config, args.renormalize, args.floor):
                print(f"{column} = {format_number(value)}" + ("" if converged else "  (not converged)"))
        else:
            config = _experiment_config(args, settings)
            runner = {"sweep": run_sweep, "table1": run_table1, "trace": run_localmin_trace}[args.command]
            path = runner(config, settings)
            print(f"\n=== done: {path} ===")
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        log.error("%s", exc)
        return EXIT_NONCONVERGED
    except (PhiError, OSError) as exc:
        log.error("%s", exc)
        return 1
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
