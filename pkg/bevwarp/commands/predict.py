from pathlib import Path

import click

from .. import schemas
from ..dependencies import command_errors, existing_dir, out_option, seed_option
from ..sim import perturb
from ..storage import load_label_set, save_predictions

probability = click.FloatRange(0, 1)


@click.command("predict")
@click.argument("labels_dir", type=existing_dir)
@click.option("--flow-sigma", type=click.FloatRange(min=0), default=0.0, show_default=True, help="Cells.")
@click.option("--boundary-flip", type=probability, default=0.0, show_default=True)
@click.option("--dropout", type=probability, default=0.0, show_default=True)
@click.option("--false-positives", type=click.FloatRange(min=0), default=0.0, show_default=True, help="Blobs per frame.")
@click.option("--outlier-prob", type=probability, default=0.0, show_default=True)
@seed_option
@out_option("predictions")
def command(
    labels_dir: Path,
    flow_sigma: float,
    boundary_flip: float,
    dropout: float,
    false_positives: float,
    outlier_prob: float,
    seed: int,
    out_dir: Path,
):
    """Turn labels into noisy synthetic network outputs."""
    with command_errors("predict"):
        labels = load_label_set(labels_dir)
        noise = schemas.NoiseConfig(
            flow_sigma=flow_sigma,
            boundary_flip_prob=boundary_flip,
            instance_dropout_prob=dropout,
            false_positive_rate=false_positives,
            flow_outlier_prob=outlier_prob,
            seed=seed,
        )
        predictions = perturb(labels, noise)
        manifest = schemas.PredictionManifest(
            frame_count=len(predictions),
            grid=labels.grid,
            modalities=predictions.MODALITIES,
            noise=noise,
        )
        save_predictions(predictions, manifest, out_dir)
    click.echo(f"frames={len(predictions)} out={out_dir}")
