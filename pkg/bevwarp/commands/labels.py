from pathlib import Path

import click

from .. import schemas
from ..dependencies import command_errors, out_option, preset_option
from ..labelgen import generate_labels
from ..sim import read_scenario
from ..storage import save_label_set


@click.command("labels")
@click.argument("scenario_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@preset_option()
@click.option("--centerness-sigma", type=click.FloatRange(min=0, min_open=True), default=3.0, show_default=True)
@click.option("--flow-threshold", type=click.FloatRange(min=0), default=0.2, show_default=True)
@out_option("labels")
def command(scenario_path: Path, preset: str, centerness_sigma: float, flow_threshold: float, out_dir: Path):
    """Render every label modality of a scenario file."""
    with command_errors("labels"):
        scenario = read_scenario(scenario_path)
        config = schemas.LabelConfig(centerness_sigma=centerness_sigma, flow_threshold=flow_threshold)
        labels = generate_labels(scenario, schemas.PRESETS[preset], config)
        save_label_set(labels, out_dir, scenario_seed=scenario.seed)
    click.echo(f"frames={len(labels)} preset={preset} out={out_dir}")
