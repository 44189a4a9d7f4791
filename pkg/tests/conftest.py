import hashlib
import os
from pathlib import Path

import numpy as np
import pytest

from bevwarp.grids import InstanceGrid
from bevwarp.labelgen import generate_labels
from bevwarp.schemas import PRESETS, AgentState, GridSpec, Pose2D, ScenarioConfig
from bevwarp.sim import simulate

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture
def long_spec() -> GridSpec:
    return PRESETS["long"]


@pytest.fixture
def small_spec() -> GridSpec:
    return GridSpec(height_cells=40, width_cells=40, resolution=0.5)


@pytest.fixture
def make_agent():
    def _make(agent_id=1, x=0.0, y=0.0, yaw=0.0, length=4.0, width=2.0, speed=0.0, yaw_rate=0.0, frames=10):
        return AgentState(
            id=agent_id,
            pose=Pose2D(x=x, y=y, yaw=yaw),
            length=length,
            width=width,
            speed=speed,
            yaw_rate=yaw_rate,
            despawn_frame=frames,
        )

    return _make


@pytest.fixture(scope="session")
def scenario():
    return simulate(ScenarioConfig(num_agents=10, num_frames=7, seed=3))


@pytest.fixture(scope="session")
def label_set(scenario):
    return generate_labels(scenario, PRESETS["long"])


def blocks(shape, *placements) -> InstanceGrid:
    """InstanceGrid with rectangles given as (id, row0, row1, col0, col1), ends exclusive."""
    ids = np.zeros(shape, dtype=np.int64)
    for instance_id, r0, r1, c0, c1 in placements:
        ids[r0:r1, c0:c1] = instance_id
    return InstanceGrid(ids)


def check_golden(name: str, data: bytes, record_missing: bool = False) -> None:
    """Compares against tests/golden/<name>.

    A missing golden fails, unless ``record_missing`` or BEVWARP_RECORD_GOLDEN
    is set, in which case it is written and the test skipped.
    """
    path = GOLDEN_DIR / name
    if not path.exists():
        if not (record_missing or os.environ.get("BEVWARP_RECORD_GOLDEN")):
            pytest.fail(f"golden file {path.name} is missing")
        GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        pytest.skip(f"recorded new golden file {path.name}")
    assert hashlib.sha256(path.read_bytes()).hexdigest() == hashlib.sha256(data).hexdigest()
