import os
import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

from typing import Dict

import click
from src.commands.baseline import baseline
from src.commands.common import EXIT_USAGE, fail
from src.commands.metrics import metrics
from src.commands.render import render
from src.commands.run import run
from src.commands.simulate import simulate
from src.models.config import load_config, normalize_key
from src.models.errors import GridFormatError
from src.models.logging_setup import configure_logging


def config_defaults(command: click.Command, values: Dict[str, str]) -> Dict[str, str]:
    """
    Map config keys onto the command's parameter names. A key may be the
    parameter name or any of its flags without the leading dashes.
    """
    names = {}
    for param in command.params:
        names[param.name] = param.name
        for opt in param.opts:
            names[normalize_key(opt.lstrip('-'))] = param.name
    unknown = sorted(key for key in values if key not in names)
    if unknown:
        raise GridFormatError(f"unknown option(s) for '{command.name}': {', '.join(unknown)}")
    return {names[key]: value for key, value in values.items()}


@click.group()
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
              help='key = value file with option defaults; explicit flags win.')
@click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
              help='Overrides GGDPOTTS_LOG_LEVEL.')
@click.pass_context
def cli(ctx, config_path, log_level):
    """Joint Bayesian deconvolution and segmentation of speckle images."""
    configure_logging(log_level)
    if config_path:
        name = ctx.invoked_subcommand
        if name is None or name not in ctx.command.commands:
            return
        try:
            values = load_config(config_path)
            defaults = config_defaults(ctx.command.commands[name], values)
        except GridFormatError as e:
            fail(f"GridFormatError: {e}", EXIT_USAGE)
        ctx.default_map = {name: defaults}


# Register subcommands
cli.add_command(simulate)
cli.add_command(run)
cli.add_command(baseline)
cli.add_command(metrics)
cli.add_command(render)

if __name__ == '__main__':
    cli()
