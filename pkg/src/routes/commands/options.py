"""
Shared options and error handling for the experiment commands
"""

import functools
import logging
import sys

import click

from src.models.zsl.exceptions import ConfigError, DataFormatError, StageError, ValidationError, ZSLError
from src.models.zsl.parameter_controls import load_config

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_STAGE = 2
EXIT_GRAD_CHECK = 3

logger = logging.getLogger("CommandLine")


def config_options(fn):
    """--config, --out and --seed on every experiment command"""
    fn = click.option("--seed", type=int, default=None, help="Run a single seed instead of the configured list.")(fn)
    fn = click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Output directory.")(fn)
    fn = click.option(
        "--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
        help="Flat key = value config file.",
    )(fn)
    return fn


def resolve_config(config_path, seed, out, overrides=None):
    return load_config(config_path, seed=seed, out=out, overrides=overrides)


def fail(stage, message, code):
    click.echo(f"[{stage}] {message}", err=True)
    sys.exit(code)


def handle_errors(fn):
    """Map library errors onto exit codes with a stage-tagged diagnostic."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as e:
            fail("config", str(e), EXIT_CONFIG)
        except (ValidationError, DataFormatError) as e:
            fail("validate", f"{type(e).__name__}: {e}", EXIT_CONFIG)
        except StageError as e:
            fail(e.stage, f"{type(e.cause).__name__}: {e.cause}", EXIT_STAGE)
        except ZSLError as e:
            # raised outside any recorded stage
            fail("stage", f"{type(e).__name__}: {e}", EXIT_STAGE)

    return wrapper
