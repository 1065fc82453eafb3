#!/usr/bin/env python3
import argparse
import logging
import os
import sys
from typing import List, Optional

from gabc_ssda import experiments
from gabc_ssda.config import Config
from gabc_ssda.data import dump_csv, generate
from gabc_ssda.errors import ConfigError, InputError, NumericError
from gabc_ssda.selftest import run_selftest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_BAD_INPUT = 2
EXIT_NUMERIC = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gabc-ssda",
        description="Graph-based adaptive betweenness clustering for "
        "semi-supervised domain adaptation",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def add_command(name: str, help_text: str) -> argparse.ArgumentParser:
        command = commands.add_parser(name, help=help_text)
        command.add_argument(
            "--config",
            default="config.yaml",
            help="YAML config file (default: config.yaml; built-in defaults if "
            "the default path does not exist)",
        )
        command.add_argument(
            "--seed",
            type=int,
            action="append",
            help="trial seed; repeat for several (overrides experiment.seeds)",
        )
        command.add_argument("--out", help="output directory (default: timestamped)")
        return command

    add_command("run", "train the configured objective once per seed")
    ablate = add_command("ablate", "run the ablation grid")
    ablate.add_argument(
        "--rows",
        help="comma-separated ablation rows to run, e.g. 1,11 (default: all)",
    )
    sweep = add_command("sweep", "vary one hyperparameter of the full objective")
    sweep.add_argument("--param", required=True, choices=experiments.SWEEP_PARAMETERS)
    sweep.add_argument(
        "--values", required=True, help="comma-separated values, e.g. 0.1,0.2,0.3"
    )
    add_command("selftest", "check defaults, closed-form values and gates")
    add_command("dump-data", "write the configured benchmark pools to CSV")
    return parser


def load_config(args: argparse.Namespace) -> Config:
    # Read user-configured options from a config file.
    # Fall back to built-in defaults only when the default path is absent
    if args.config == "config.yaml" and not os.path.isfile(args.config):
        config = Config.from_dict({})
    else:
        config = Config(args.config)
    if args.seed:
        config.seeds = list(args.seed)
    return config


def _split(text: str) -> List[str]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    if not items:
        raise ConfigError(f"Expected a comma-separated list, got '{text}'")
    return items


def dispatch(args: argparse.Namespace, config: Config) -> int:
    if args.command == "selftest":
        failures = run_selftest()
        if failures:
            logger.error("Self-test found %d problem(s)", len(failures))
            return EXIT_FAILED
        logger.info("Self-test passed")
        return EXIT_OK

    if args.command == "run":
        experiments.run_experiment(config, args.out)
    elif args.command == "ablate":
        rows = _split(args.rows) if args.rows else None
        experiments.run_ablation(config, rows, args.out)
    elif args.command == "sweep":
        try:
            values = [float(value) for value in _split(args.values)]
        except ValueError:
            raise ConfigError(f"--values must be numbers, got '{args.values}'")
        experiments.run_sweep(config, args.param, values, args.out)
    elif args.command == "dump-data":
        path = args.out or "pools.csv"
        for seed in config.seeds:
            pools = generate(
                config.domain, seed if config.data_seed is None else config.data_seed
            )
            root, extension = os.path.splitext(path)
            target = (
                path
                if len(config.seeds) == 1
                else f"{root}.seed-{seed}{extension or '.csv'}"
            )
            dump_csv(pools, target)
            logger.info(f"Wrote pools for seed {seed} to {target}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """The first function that is run by the `gabc-ssda` command"""
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            config = Config.from_dict({})
        else:
            config = load_config(args)
        config.setup_logging()
        return dispatch(args, config)
    except (ConfigError, InputError) as e:
        logger.error("%s", e)
        print(f"gabc-ssda: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except NumericError as e:
        logger.error("Run aborted: %s (at %s)", e, e.where)
        print(f"gabc-ssda: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception:
        logger.exception("An exception was raised.")
        return EXIT_FAILED
