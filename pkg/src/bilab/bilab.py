import sys
from pathlib import Path

import click

from bilab.errors import ConfigError
from bilab.experiments import EXPERIMENTS, run
from bilab.logging import configure_module_logger, setup_logging

general_config = {
    "config": None,
    "out": "bilab-out",
    "seed": None,
    "verbose": False,
    "quiet": False,
    "log_file": None,
}

# Set up module logger
logger = configure_module_logger(__name__)


@click.command()
@click.argument("subcommand", type=click.Choice(list(EXPERIMENTS)))
@click.option(
    "--config",
    "-c",
    type=click.Path(dir_okay=False),
    help="Experiment configuration (flat TOML); defaults are used when omitted",
    default=general_config["config"],
)
@click.option(
    "--out",
    "-o",
    type=click.Path(file_okay=False),
    help=f"Output directory (default: {general_config['out']})",
    default=general_config["out"],
)
@click.option(
    "--seed",
    "-s",
    type=click.IntRange(min=0, max=2**64 - 1),
    help="Override the seed of the configuration",
    default=general_config["seed"],
)
@click.option(
    "--verbose",
    "-v",
    is_flag=True,
    help="Enable verbose logging",
    default=general_config["verbose"],
)
@click.option(
    "--quiet",
    "-q",
    is_flag=True,
    help="Disable all logging output",
    default=general_config["quiet"],
)
@click.option(
    "--log-file", type=click.Path(), help="Path to log file (enables file logging)"
)
def main(subcommand, config, out, seed, verbose, quiet, log_file):
    """Run a bilab experiment and write its report.

    Exit code 0 when every check passes, 1 on a failed check or numerical failure,
    2 on an invalid configuration.
    """

    # Validate mutually exclusive options
    if verbose and quiet:
        click.echo(
            "--verbose and --quiet options cannot be used together. Overriding --quiet."
        )
        quiet = False

    # Initialize logging
    if quiet:
        setup_logging(quiet=True)
    else:
        log_level = "DEBUG" if verbose else "INFO"
        file_output = log_file is not None
        setup_logging(
            log_level=log_level,
            log_file=Path(log_file) if log_file else None,
            console_output=True,
            file_output=file_output,
            quiet=False,
        )

    logger.info(f"Starting bilab {subcommand}")
    logger.debug(f"Config: {config}, Output: {out}, Seed: {seed}")

    try:
        report = run(
            subcommand,
            config_path=Path(config) if config else None,
            out=Path(out),
            seed=seed,
        )
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(2)

    failed = [c.name for c in report.checks if not c.passed]
    if report.error:
        click.echo(f"{subcommand}: {report.error}", err=True)
    elif failed:
        click.echo(f"{subcommand}: failed checks: {', '.join(failed)}", err=True)
    else:
        click.echo(f"{subcommand}: all {len(report.checks)} checks passed")

    logger.info("bilab run completed")
    sys.exit(0 if report.passed else 1)
