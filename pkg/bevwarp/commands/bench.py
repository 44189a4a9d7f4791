from pathlib import Path
from typing import Optional

import click

from .. import schemas, settings
from ..dependencies import command_errors, out_option, preset_option, seed_option, tin_option
from ..experiment import format_curves, format_runtime, format_table, run_matrix

TABLE_FILE = "bench_table.txt"
CURVES_FILE = "bench_curves.txt"


@click.command("bench")
@preset_option()
@tin_option
@click.option("--tout", "horizons", type=click.Choice(["4", "16"]), multiple=True, default=("4", "16"), show_default=True)
@click.option("--flow-sigma", "sigmas", type=click.FloatRange(min=0), multiple=True, default=(0.0, 0.5, 1.0, 2.0), show_default=True)
@click.option("--boundary-flip", type=click.FloatRange(0, 1), default=0.05, show_default=True)
@click.option("--outlier-prob", type=click.FloatRange(0, 1), default=0.0, show_default=True)
@click.option("--dropout", type=click.FloatRange(0, 1), default=0.0, show_default=True)
@click.option("--false-positives", type=click.FloatRange(min=0), default=0.0, show_default=True)
@seed_option
@click.option("--seeds", "num_seeds", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--agents", "num_agents", type=click.IntRange(min=0), default=10, show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=settings.WORKERS, show_default=True)
@click.option("--timing-out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Also write runtime means here.")
@out_option("bench")
def command(
    preset: str,
    t_in: int,
    horizons: tuple[str, ...],
    sigmas: tuple[float, ...],
    boundary_flip: float,
    outlier_prob: float,
    dropout: float,
    false_positives: float,
    seed: int,
    num_seeds: int,
    num_agents: int,
    workers: int,
    timing_out: Optional[Path],
    out_dir: Path,
):
    """Compare warp and HM association over horizons and flow noise levels.

    The table and curve files hold no timings, so they are identical across
    runs with the same flags; runtimes go to stdout and to --timing-out.
    """
    with command_errors("bench"):
        noise = schemas.NoiseConfig(
            boundary_flip_prob=boundary_flip,
            instance_dropout_prob=dropout,
            false_positive_rate=false_positives,
            flow_outlier_prob=outlier_prob,
            seed=seed,
        )
        config = schemas.ExperimentConfig(
            preset=preset,
            t_in=t_in,
            horizons=tuple(int(h) for h in horizons),
            num_agents=num_agents,
            noise=noise,
            seeds=tuple(range(seed, seed + num_seeds)),
        )
        rows = run_matrix(config, sigmas=list(sigmas), workers=workers)

        out_dir.mkdir(parents=True, exist_ok=True)
        table = format_table(rows)
        runtime = format_runtime(rows)
        (out_dir / TABLE_FILE).write_text(table, encoding="utf-8")
        (out_dir / CURVES_FILE).write_text(format_curves(rows), encoding="utf-8")
        if timing_out is not None:
            timing_out.parent.mkdir(parents=True, exist_ok=True)
            timing_out.write_text(runtime, encoding="utf-8")

    click.echo(table, nl=False)
    click.echo(runtime, nl=False)
