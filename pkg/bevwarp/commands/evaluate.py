from pathlib import Path
from typing import Optional

import click

from .. import schemas
from ..dependencies import command_errors, existing_dir
from ..exceptions import ArtifactError, MetricsError
from ..losses import evaluate_losses
from ..metrics import evaluate
from ..storage import load_instances, load_label_set, load_predictions


@click.command("eval")
@click.argument("inst_dir", type=existing_dir)
@click.argument("gt_dir", type=existing_dir)
@click.option("--losses", "with_losses", is_flag=True, help="Also report the training objective.")
@click.option("--pred-dir", type=existing_dir, default=None, help="Predictions scored by --losses.")
@click.option("--weighting", type=click.Choice(["fixed", "uncertainty"]), default="fixed", show_default=True)
@click.option("--lambda-seg", type=click.FloatRange(min=0), default=1.0, show_default=True)
@click.option("--lambda-flow", type=click.FloatRange(min=0), default=1.0, show_default=True)
@click.option("--s-seg", type=float, default=0.0, show_default=True, help="Log-variance, uncertainty weighting.")
@click.option("--s-flow", type=float, default=0.0, show_default=True)
def command(
    inst_dir: Path,
    gt_dir: Path,
    with_losses: bool,
    pred_dir: Optional[Path],
    weighting: str,
    lambda_seg: float,
    lambda_flow: float,
    s_seg: float,
    s_flow: float,
):
    """Score an instance sequence against ground-truth labels."""
    with command_errors("eval"):
        instances, manifest = load_instances(inst_dir)
        labels = load_label_set(gt_dir)
        last = manifest.first_frame + manifest.frame_count
        if last > len(labels):
            raise MetricsError(
                f"{inst_dir} covers frames {manifest.first_frame}..{last - 1}, labels only have {len(labels)}"
            )
        gt = [frame.inst for frame in labels.frames[manifest.first_frame : last]]
        report = evaluate(instances, gt)

        breakdown = None
        if with_losses:
            if pred_dir is None:
                raise ArtifactError("--losses needs --pred-dir")
            predictions, _ = load_predictions(pred_dir)
            if weighting == "fixed":
                scheme = schemas.FixedWeighting(lambda_seg=lambda_seg, lambda_flow=lambda_flow)
            else:
                scheme = schemas.UncertaintyWeighting(s_seg=s_seg, s_flow=s_flow)
            breakdown = evaluate_losses(
                predictions,
                labels,
                schemas.LossConfig(weighting=scheme),
                manifest.first_frame,
                manifest.frame_count,
            )

    for line in report.to_lines():
        click.echo(line)
    if breakdown is not None:
        for line in breakdown.to_lines():
            click.echo(line)
