from pathlib import Path
from typing import Optional

import click

from .. import schemas
from ..dependencies import command_errors, out_option, seed_option, tin_option
from ..sim import simulate, write_scenario

SCENARIO_FILE = "scenario.jsonl"


@click.command("simulate")
@click.option("--agents", "num_agents", type=click.IntRange(min=0), default=10, show_default=True)
@click.option("--frames", "num_frames", type=click.IntRange(min=1), default=None, help="Defaults to tin + tout.")
@tin_option
@click.option("--tout", "t_out", type=click.IntRange(min=1), default=4, show_default=True)
@click.option(
    "--ego-profile",
    type=click.Choice(["straight", "constant_turn", "stop_and_go"]),
    default="straight",
    show_default=True,
)
@seed_option
@out_option("scenario")
def command(
    num_agents: int,
    num_frames: Optional[int],
    t_in: int,
    t_out: int,
    ego_profile: str,
    seed: int,
    out_dir: Path,
):
    """Generate a seeded scenario of CTRV agents around the ego."""
    with command_errors("simulate"):
        config = schemas.ScenarioConfig(
            num_agents=num_agents,
            num_frames=num_frames or t_in + t_out,
            seed=seed,
            ego_profile=ego_profile,
        )
        scenario = simulate(config)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / SCENARIO_FILE
        write_scenario(scenario, path)
    click.echo(f"frames={len(scenario.frames)} agents={num_agents} out={path}")
