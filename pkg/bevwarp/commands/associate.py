from pathlib import Path
from typing import Optional

import click

from .. import schemas
from ..dependencies import command_errors, existing_dir, out_option, preset_for, preset_option, tin_option
from ..exceptions import AssociationError
from ..experiment import run_modes
from ..storage import load_predictions, save_instances


@click.command("associate")
@click.argument("pred_dir", type=existing_dir)
@click.option("--mode", type=click.Choice(["warp", "hm"]), default="warp", show_default=True)
@tin_option
@click.option("--tout", "t_out", type=click.IntRange(min=1), default=None, help="Defaults to every frame after tin.")
@preset_option(default=None)
@click.option("--center-threshold", type=click.FloatRange(0, 1), default=0.1, show_default=True)
@out_option("instances")
def command(
    pred_dir: Path,
    mode: str,
    t_in: int,
    t_out: Optional[int],
    preset: Optional[str],
    center_threshold: float,
    out_dir: Path,
):
    """Assign instance IDs over the predicted frames with one pipeline."""
    with command_errors("associate"):
        predictions, manifest = load_predictions(pred_dir)
        t_out = t_out or manifest.frame_count - t_in
        if t_out < 1 or t_in + t_out > manifest.frame_count:
            raise AssociationError(
                f"tin={t_in} tout={t_out} needs {t_in + t_out} frames, {pred_dir} has {manifest.frame_count}"
            )
        preset = preset or preset_for(manifest.grid)
        assoc = schemas.AssocConfig.for_preset(preset, center_threshold=center_threshold, mode=mode)
        result = run_modes(predictions, t_in, t_out, assoc, modes=(mode,))[mode]
        save_instances(
            result.instances,
            schemas.InstanceManifest(
                frame_count=len(result.instances),
                first_frame=t_in,
                grid=manifest.grid,
                mode=mode,
                assoc=assoc,
            ),
            out_dir,
            timings=result.timings,
        )

    for line in result.timing_lines():
        click.echo(line)
    click.echo(f"mode={mode} frames={len(result.instances)} out={out_dir}")
