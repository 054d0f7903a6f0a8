"""
Shift Learning Lab - Main Application

This script is the `lab` command line entry point. Each subcommand runs one
experiment kind (or renders the outputs of a finished run) with defaults from
config/config.yaml, an optional experiment file, and command line overrides.
"""
import sys
import logging
import argparse
from pathlib import Path

from src.experiments.harness import run_experiment, resolve_parameters
from src.experiments.spec import ExperimentSpec, KINDS
from src.utils.errors import LabError, ConfigurationError
from src.utils.helpers import load_config, merge_config, setup_logging
from dashboard import create_section, format_table, render_report

logger = logging.getLogger('lab')

LOG_LEVELS = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']


def parse_seeds(text):
    """Parse `a,b,c` into a list of integers."""
    if not text:
        return None
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError as e:
        raise ConfigurationError(f"--seeds must be comma-separated integers, got {text!r}") from e


def parse_args(argv=None):
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        prog='lab',
        description='Shift Learning Lab'
    )

    parser.add_argument(
        'command',
        choices=list(KINDS) + ['report'],
        help='Experiment kind to run, or `report` to render an output directory'
    )

    parser.add_argument(
        '--config',
        help='Experiment file (JSON or YAML) with kind, parameters, seeds and output_dir'
    )

    parser.add_argument(
        '--defaults',
        default='config/config.yaml',
        help='Application configuration with the default knobs'
    )

    parser.add_argument(
        '--fast',
        action='store_true',
        help='Apply the fast profile of the application configuration'
    )

    parser.add_argument(
        '--out',
        help='Output directory (overrides the experiment file)'
    )

    parser.add_argument(
        '--seeds',
        help='Comma-separated seeds (overrides the experiment file)'
    )

    parser.add_argument(
        '--workers',
        type=int,
        help='Number of worker processes (overrides harness.workers)'
    )

    parser.add_argument(
        '--log-level',
        choices=LOG_LEVELS,
        help='Set the logging level (overrides logging.level of the config)'
    )

    return parser.parse_args(argv)


def build_spec(args, config):
    """
    Build the experiment for a subcommand.

    Without an experiment file the kind's resolved defaults become the
    parameters, so the spec hash reflects the profile in use.

    Args:
        args (argparse.Namespace): Parsed arguments
        config (dict): Application configuration, profile applied

    Returns:
        ExperimentSpec: The experiment
    """
    if args.config:
        spec = ExperimentSpec.load(args.config)
        if spec.kind != args.command:
            raise ConfigurationError(f"experiment file is of kind {spec.kind!r}, not {args.command!r}")
    else:
        output_root = config.get('storage', {}).get('output_root', 'results')
        spec = ExperimentSpec(
            kind=args.command,
            parameters=resolve_parameters(args.command, config, {}),
            seeds=config.get('harness', {}).get('seeds', [0]),
            output_dir=str(Path(output_root) / args.command),
        )
    return spec.with_overrides(seeds=parse_seeds(args.seeds), output_dir=args.out)


def logging_settings(config, log_level=None):
    """
    Log directory and level from the `logging` section.

    Args:
        config (dict): Application configuration
        log_level (str, optional): Level from the command line, overriding the config

    Returns:
        tuple: (log directory, logging level as an int)
    """
    section = config.get('logging', {}) or {}
    level = str(log_level or section.get('level', 'INFO')).upper()
    if level not in LOG_LEVELS:
        raise ConfigurationError(f"unknown logging level {level!r}; expected one of {LOG_LEVELS}")
    return section.get('log_dir', 'logs'), getattr(logging, level)


def main(argv=None):
    """Main application entry point."""
    args = parse_args(argv)

    try:
        config = load_config(args.defaults)
        log_dir, log_level = logging_settings(config, args.log_level)
    except LabError as e:
        setup_logging(log_level=getattr(logging, args.log_level or 'INFO'))
        logger.error(f"{type(e).__name__}: {str(e)}")
        return 1
    setup_logging(log_dir=log_dir, log_level=log_level)

    logger.info("Starting Shift Learning Lab")

    try:
        if args.fast:
            config = merge_config(config, config.get('profiles', {}).get('fast', {}))

        if args.command == 'report':
            if not args.out:
                raise ConfigurationError("report needs --out <output directory>")
            return 0 if render_report(args.out) else 1

        spec = build_spec(args, config)
        outcome = run_experiment(spec, config, args.workers)

        create_section(f"{spec.kind.upper()} ({spec.spec_hash[:12]})")
        print(f"Output directory: {spec.output_dir}")
        print(f"Cells: {len(outcome.records)}, failed: {outcome.failed}")
        if outcome.summary is not None:
            print(format_table(outcome.summary))

        if outcome.failed:
            logger.error(f"{outcome.failed} cells failed")
            return 1
        logger.info("Experiment completed successfully")
        return 0

    except LabError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        return 1
    except Exception as e:
        logger.exception(f"An error occurred: {str(e)}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
