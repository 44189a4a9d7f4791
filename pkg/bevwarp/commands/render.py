from pathlib import Path

import click

from ..dependencies import command_errors, existing_dir, out_option
from ..render import render_frames
from ..storage import load_grid_sequence


@click.command("render")
@click.argument("grid_dir", type=existing_dir)
@click.option("--modality", type=click.Choice(["inst", "seg", "centerness"]), default="inst", show_default=True)
@out_option("render")
def command(grid_dir: Path, modality: str, out_dir: Path):
    """Write one PPM image per frame, a stable colour per instance ID."""
    with command_errors("render"):
        paths = render_frames(load_grid_sequence(grid_dir, modality), out_dir)
    click.echo(f"frames={len(paths)} out={out_dir}")
