"""
Entry point: configures logging and registers the experiment commands
"""

import logging
import os
import sys
# DON'T CHANGE THIS !!!
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

import click

from src.routes import COMMANDS

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


@click.group()
@click.option("--verbose", is_flag=True, help="Log per-epoch losses and solver details.")
def cli(verbose):
    """Semantic feature expansion for zero-shot learning."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)


for command in COMMANDS:
    cli.add_command(command)


if __name__ == "__main__":
    cli()
