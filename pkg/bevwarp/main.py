import logging

import click

from . import settings
from .commands import associate, bench, evaluate, labels, predict, render, simulate


@click.group(help="BEV instance prediction post-processing toolkit.")
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default=settings.LOG_LEVEL,
    show_default=True,
)
def cli(log_level: str):
    # logs go to stderr, results to stdout
    logging.basicConfig(
        level=log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


# Artifact producers
cli.add_command(simulate.command)
cli.add_command(labels.command)
cli.add_command(predict.command)

# Post-processing and scoring
cli.add_command(associate.command)
cli.add_command(evaluate.command)
cli.add_command(bench.command)
cli.add_command(render.command)
