from contextlib import contextmanager
from pathlib import Path

import click
from pydantic import ValidationError

from . import settings
from .exceptions import BevWarpError
from .schemas import PRESETS


# every command runs its work inside this; known failures become a one-line diagnostic
@contextmanager
def command_errors(action: str):
    try:
        yield
    except Exception as e:
        if isinstance(e, click.ClickException):
            raise e
        if isinstance(e, ValidationError):
            first = e.errors()[0]
            location = ".".join(str(part) for part in first["loc"]) or "<input>"
            raise click.ClickException(f"{action} failed: field {location}: {first['msg']}") from e
        if isinstance(e, (BevWarpError, OSError)):
            raise click.ClickException(f"{action} failed: {e}") from e
        raise


def out_option(default_name: str):
    return click.option(
        "--out",
        "out_dir",
        type=click.Path(file_okay=False, path_type=Path),
        default=Path(settings.DEFAULT_OUT_DIR) / default_name,
        show_default=True,
        help="Output directory.",
    )


def preset_option(default="long"):
    return click.option(
        "--preset",
        type=click.Choice(sorted(PRESETS)),
        default=default,
        show_default=default is not None,
        help="BEV window: long = 100 m at 0.5 m, short = 30 m at 0.15 m.",
    )


tin_option = click.option(
    "--tin", "t_in", type=click.IntRange(min=1), default=3, show_default=True, help="Observed frames."
)

seed_option = click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)

existing_dir = click.Path(exists=True, file_okay=False, path_type=Path)


def preset_for(grid) -> str:
    """Name of the preset a stored grid was rendered with; ``long`` if none matches."""
    for name, spec in PRESETS.items():
        if spec.shape == grid.shape and spec.resolution == grid.resolution:
            return name
    return "long"
