import logging

import click
from dotenv import load_dotenv

from commands import generate, preprocess, stats, train

load_dotenv()


@click.group()
@click.option("--log-level", default="WARNING", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level):
    """Melody generation with a conditional convolutional GAN."""
    logging.basicConfig(level=log_level.upper(), format="%(levelname)s %(name)s: %(message)s")


cli.add_command(preprocess.command)
cli.add_command(train.command)
cli.add_command(generate.command)
cli.add_command(stats.command)


if __name__ == "__main__":
    cli()
