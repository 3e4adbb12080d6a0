"""Exit codes and helpers shared by the subcommands."""

import click

EXIT_OK = 0
EXIT_TRAINING_ABORTED = 1
EXIT_BAD_INPUT = 2
EXIT_NOTHING_ACCEPTED = 3
EXIT_MISMATCH = 4
EXIT_BAD_CHORD = 5

config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                             default=None, help="key = value settings file; flags take precedence.")


def fail(message: str, code: int):
    """Print a diagnostic to stderr and leave with `code`."""
    click.echo(f"error: {message}", err=True)
    click.get_current_context().exit(code)


def emit(text: str, out_path=None):
    """Write requested output to `out_path`, or to stdout when no path is given."""
    if out_path:
        try:
            with open(out_path, "w", encoding="utf-8") as f:
                f.write(text)
        except OSError as e:
            fail(f"cannot write {out_path}: {e}", EXIT_BAD_INPUT)
    else:
        click.echo(text, nl=False)
