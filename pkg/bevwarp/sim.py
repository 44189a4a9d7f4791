"""Scenario simulation, the perturbation oracle and the scenario file format."""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ValidationError
from scipy import ndimage

from .exceptions import ArtifactError, ScenarioFormatError, SimulationError
from .grids import FlowGrid, SegGrid
from .labelgen import LabelFrame, LabelSet
from .schemas import (
    AgentState,
    NoiseConfig,
    Pose2D,
    Scenario,
    ScenarioConfig,
    ScenarioFrame,
)

logger = logging.getLogger(__name__)

SCENARIO_FORMAT = "bevwarp-scenario"
SCENARIO_VERSION = 1

# Turn rates below this are integrated as straight lines
_STRAIGHT_YAW_RATE = 1e-9

# Stop-and-go ego: this many frames driving, then as many standing
_STOP_AND_GO_PHASE = 4

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


# --- Kinematics ---


def _ctrv(pose: Pose2D, speed: float, yaw_rate: float, dt: float) -> Pose2D:
    """Closed-form CTRV arc; negative ``dt`` integrates backwards."""
    if abs(yaw_rate) < _STRAIGHT_YAW_RATE:
        return Pose2D(
            x=pose.x + speed * math.cos(pose.yaw) * dt,
            y=pose.y + speed * math.sin(pose.yaw) * dt,
            yaw=pose.yaw,
        )
    yaw_next = pose.yaw + yaw_rate * dt
    radius = speed / yaw_rate
    return Pose2D(
        x=pose.x + radius * (math.sin(yaw_next) - math.sin(pose.yaw)),
        y=pose.y + radius * (math.cos(pose.yaw) - math.cos(yaw_next)),
        yaw=yaw_next,
    )


def step_agent(state: AgentState, dt: float) -> AgentState:
    """Advances one agent by ``dt`` seconds; speed and turn rate are kept."""
    if dt <= 0:
        raise SimulationError("dt must be positive")
    return state.model_copy(update={"pose": _ctrv(state.pose, state.speed, state.yaw_rate, dt)})


# --- Ego motion ---


def _ego_controls(config: ScenarioConfig, step: int) -> tuple[float, float]:
    if config.ego_profile == "constant_turn":
        return config.ego_speed, config.ego_yaw_rate
    if config.ego_profile == "stop_and_go":
        moving = (step // _STOP_AND_GO_PHASE) % 2 == 0
        return (config.ego_speed if moving else 0.0), 0.0
    return config.ego_speed, 0.0


def _ego_mean_controls(config: ScenarioConfig) -> tuple[float, float]:
    if config.ego_profile == "constant_turn":
        return config.ego_speed, config.ego_yaw_rate
    if config.ego_profile == "stop_and_go":
        return config.ego_speed / 2.0, 0.0
    return config.ego_speed, 0.0


def ego_trajectory(config: ScenarioConfig) -> list[Pose2D]:
    poses = [Pose2D()]
    for step in range(config.num_frames - 1):
        speed, yaw_rate = _ego_controls(config, step)
        poses.append(_ctrv(poses[-1], speed, yaw_rate, config.dt))
    return poses


# --- Agent sampling ---


def _roll_out(state: AgentState, num_frames: int, dt: float) -> list[AgentState]:
    states = [state]
    for _ in range(num_frames - 1):
        states.append(step_agent(states[-1], dt))
    return states


def _positions(track: list[AgentState]) -> np.ndarray:
    return np.array([(state.pose.x, state.pose.y) for state in track])


def _sample_size(config: ScenarioConfig, rng: np.random.Generator) -> tuple[float, float]:
    return float(rng.uniform(*config.length_range)), float(rng.uniform(*config.width_range))


def _escort(config: ScenarioConfig, egos: list[Pose2D], rng: np.random.Generator) -> AgentState:
    """An agent travelling alongside the ego so the window is never empty."""
    speed, yaw_rate = _ego_mean_controls(config)
    speed = min(max(speed, config.speed_min), config.speed_max)
    yaw_rate = min(max(yaw_rate, -config.yaw_rate_max), config.yaw_rate_max)
    ahead = float(rng.uniform(6.0, 10.0))
    lateral = float(rng.uniform(-3.0, 3.0))
    ego = egos[0]
    length, width = _sample_size(config, rng)
    return AgentState(
        id=1,
        pose=Pose2D(
            x=ego.x + ahead * math.cos(ego.yaw) - lateral * math.sin(ego.yaw),
            y=ego.y + ahead * math.sin(ego.yaw) + lateral * math.cos(ego.yaw),
            yaw=ego.yaw,
        ),
        length=length,
        width=width,
        speed=speed,
        yaw_rate=yaw_rate,
        despawn_frame=config.num_frames,
    )


def _traffic_agent(
    agent_id: int, config: ScenarioConfig, egos: list[Pose2D], rng: np.random.Generator
) -> AgentState:
    """An agent passing near a random point of the ego path, lane-like heading."""
    frame = int(rng.integers(0, len(egos)))
    reference = egos[frame]
    radius = config.spawn_radius * math.sqrt(rng.uniform())
    bearing = rng.uniform(-math.pi, math.pi)
    heading = reference.yaw + rng.normal(0.0, 0.1)
    if rng.uniform() < 0.5:
        heading += math.pi
    speed = float(rng.uniform(config.speed_min, config.speed_max))
    yaw_rate = float(rng.uniform(-config.yaw_rate_max, config.yaw_rate_max))
    at_frame = Pose2D(
        x=reference.x + radius * math.cos(bearing),
        y=reference.y + radius * math.sin(bearing),
        yaw=heading,
    )
    length, width = _sample_size(config, rng)
    return AgentState(
        id=agent_id,
        pose=_ctrv(at_frame, speed, yaw_rate, -frame * config.dt),
        length=length,
        width=width,
        speed=speed,
        yaw_rate=yaw_rate,
        despawn_frame=config.num_frames,
    )


def _separated(candidate: np.ndarray, accepted: list[np.ndarray], min_separation: float) -> bool:
    for other in accepted:
        if np.min(np.linalg.norm(candidate - other, axis=1)) < min_separation:
            return False
    return True


def _covers_window(tracks: list[list[AgentState]], egos: list[Pose2D], half_extent: float) -> bool:
    for t, ego in enumerate(egos):
        cos_a, sin_a = math.cos(ego.yaw), math.sin(ego.yaw)
        visible = False
        for track in tracks:
            dx, dy = track[t].pose.x - ego.x, track[t].pose.y - ego.y
            forward, left = cos_a * dx + sin_a * dy, -sin_a * dx + cos_a * dy
            if abs(forward) <= half_extent and abs(left) <= half_extent:
                visible = True
                break
        if not visible:
            return False
    return True


def _sample_tracks(
    config: ScenarioConfig, egos: list[Pose2D], rng: np.random.Generator
) -> list[list[AgentState]]:
    tracks: list[list[AgentState]] = []
    positions: list[np.ndarray] = []
    for agent_id in range(1, config.num_agents + 1):
        for _ in range(config.max_attempts):
            if agent_id == 1:
                state = _escort(config, egos, rng)
            else:
                state = _traffic_agent(agent_id, config, egos, rng)
            track = _roll_out(state, config.num_frames, config.dt)
            candidate = _positions(track)
            if _separated(candidate, positions, config.min_separation):
                tracks.append(track)
                positions.append(candidate)
                break
        else:
            raise SimulationError(
                f"could not place agent {agent_id} with {config.min_separation} m separation "
                f"after {config.max_attempts} attempts"
            )
    return tracks


def simulate(config: ScenarioConfig) -> Scenario:
    """Deterministic scenario for the given seed: ego plus CTRV agents."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    egos = ego_trajectory(config)

    tracks: list[list[AgentState]] = []
    if config.num_agents > 0:
        for attempt in range(config.max_attempts):
            tracks = _sample_tracks(config, egos, rng)
            if _covers_window(tracks, egos, config.window_half_extent):
                logger.debug("scenario seed=%d accepted after %d attempts", config.seed, attempt + 1)
                break
        else:
            raise SimulationError(
                f"no agent layout kept the window occupied after {config.max_attempts} attempts"
            )

    frames = tuple(
        ScenarioFrame(index=t, ego=ego, agents=tuple(track[t] for track in tracks))
        for t, ego in enumerate(egos)
    )
    logger.info(
        "simulated %d frames with %d agents (seed=%d, ego=%s)",
        config.num_frames,
        config.num_agents,
        config.seed,
        config.ego_profile,
    )
    return Scenario(dt=config.dt, seed=config.seed, frames=frames, config=config)


# --- Perturbation ---


@dataclass(frozen=True)
class Predictions:
    """Synthetic network outputs, one entry per scenario frame."""

    seg: tuple[SegGrid, ...]
    back_flow: tuple[FlowGrid, ...]
    centerness: tuple[SegGrid, ...]
    offset: tuple[FlowGrid, ...]
    fwd_flow: tuple[FlowGrid, ...]

    MODALITIES = ("seg", "back_flow", "centerness", "offset", "fwd_flow")

    def __len__(self) -> int:
        return len(self.seg)

    def sequence(self, modality: str) -> tuple:
        if modality not in self.MODALITIES:
            raise KeyError(f"unknown modality {modality!r}")
        return getattr(self, modality)


def _drop_instances(ids: np.ndarray, prob: float, rng: np.random.Generator) -> np.ndarray:
    instance_ids = np.unique(ids)
    instance_ids = instance_ids[instance_ids != 0]
    dropped = instance_ids[rng.random(instance_ids.size) < prob]
    if dropped.size == 0:
        return ids
    return np.where(np.isin(ids, dropped), 0, ids)


def _flip_boundaries(ids: np.ndarray, prob: float, rng: np.random.Generator) -> np.ndarray:
    fg = ids != 0
    neighbour_max = ndimage.maximum_filter(ids, footprint=_EIGHT_CONNECTED, mode="constant", cval=0)
    neighbour_min = ndimage.minimum_filter(ids, footprint=_EIGHT_CONNECTED, mode="constant", cval=0)
    inner = fg & ((neighbour_max != ids) | (neighbour_min != ids))
    outer = ~fg & (neighbour_max != 0)

    draws = rng.random(ids.shape)
    flipped = ids.copy()
    flipped[inner & (draws < prob)] = 0
    grow = outer & (draws < prob)
    flipped[grow] = neighbour_max[grow]
    return flipped


def _transfer(frame: LabelFrame, ids: np.ndarray):
    """Regression targets for the perturbed mask, borrowed from the nearest GT cell.

    Offsets and backward flow are re-targeted so borrowed vectors still end
    on the same centre; forward flow and centerness are copied as they are.
    """
    gt_fg = frame.inst.foreground
    fg = ids != 0
    rows, cols = np.indices(ids.shape)
    if gt_fg.any():
        _, (src_rows, src_cols) = ndimage.distance_transform_edt(~gt_fg, return_indices=True)
    else:
        src_rows, src_cols = rows, cols
    shift_rows = (src_rows - rows).astype(np.float64)
    shift_cols = (src_cols - cols).astype(np.float64)

    def borrow(values: np.ndarray, shift: Optional[np.ndarray] = None) -> np.ndarray:
        out = values[src_rows, src_cols].astype(np.float64)
        if shift is not None:
            out = out + shift
        return np.where(fg, out, 0.0)

    centerness = borrow(frame.centerness.values)
    offset = (borrow(frame.offset.dy, shift_rows), borrow(frame.offset.dx, shift_cols))
    back_flow = (borrow(frame.back_flow.dy, shift_rows), borrow(frame.back_flow.dx, shift_cols))
    fwd_flow = (borrow(frame.fwd_flow.dy), borrow(frame.fwd_flow.dx))
    return centerness, offset, back_flow, fwd_flow


def _add_false_positives(ids, centerness, offset, back_flow, rate, rng):
    count = int(rng.poisson(rate))
    height, width = ids.shape
    next_id = int(ids.max()) + 1
    for _ in range(count):
        size_rows, size_cols = (int(v) for v in rng.integers(2, 5, size=2))
        r0 = int(rng.integers(0, max(1, height - size_rows + 1)))
        c0 = int(rng.integers(0, max(1, width - size_cols + 1)))
        block = np.zeros(ids.shape, dtype=bool)
        block[r0 : r0 + size_rows, c0 : c0 + size_cols] = True
        block &= ids == 0
        if not block.any():
            continue
        rows, cols = np.nonzero(block)
        center_row, center_col = rows.mean(), cols.mean()
        ids[rows, cols] = next_id
        next_id += 1
        d2 = (rows - np.rint(center_row)) ** 2 + (cols - np.rint(center_col)) ** 2
        centerness[rows, cols] = 0.3 * np.exp(-d2 / 2.0)
        for field in (offset, back_flow):
            field[0][rows, cols] = center_row - rows
            field[1][rows, cols] = center_col - cols
    return count


def _flow_noise(fg: np.ndarray, noise: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    shape = (2,) + fg.shape
    values = rng.normal(0.0, noise.flow_sigma, size=shape) if noise.flow_sigma > 0 else np.zeros(shape)
    if noise.flow_outlier_prob > 0:
        outliers = rng.random(fg.shape) < noise.flow_outlier_prob
        values[:, outliers] = rng.normal(0.0, noise.flow_outlier_sigma, size=(2, int(outliers.sum())))
    return np.where(fg, values, 0.0)


def _perturb_frame(frame: LabelFrame, noise: NoiseConfig, rng: np.random.Generator):
    ids = np.array(frame.inst.ids)
    if noise.instance_dropout_prob > 0:
        ids = _drop_instances(ids, noise.instance_dropout_prob, rng)
    if noise.boundary_flip_prob > 0:
        ids = _flip_boundaries(ids, noise.boundary_flip_prob, rng)

    centerness, offset, back_flow, fwd_flow = _transfer(frame, ids)
    offset, back_flow, fwd_flow = [list(field) for field in (offset, back_flow, fwd_flow)]
    if noise.false_positive_rate > 0:
        _add_false_positives(ids, centerness, offset, back_flow, noise.false_positive_rate, rng)

    fg = ids != 0
    if noise.flow_sigma > 0 or noise.flow_outlier_prob > 0:
        for field in (offset, fwd_flow, back_flow):
            jitter = _flow_noise(fg, noise, rng)
            field[0] = field[0] + jitter[0]
            field[1] = field[1] + jitter[1]

    return (
        SegGrid(fg.astype(np.float32)),
        FlowGrid(*back_flow),
        SegGrid(centerness),
        FlowGrid(*offset),
        FlowGrid(*fwd_flow),
    )


def perturb(labels: LabelSet, noise: NoiseConfig) -> Predictions:
    """Turns clean labels into noisy predictions, deterministically per seed.

    Each frame draws from its own stream spawned off ``noise.seed``. An
    all-zero configuration reproduces the labels exactly.
    """
    streams = np.random.SeedSequence(noise.seed).spawn(len(labels))
    per_frame = [
        _perturb_frame(frame, noise, np.random.Generator(np.random.PCG64(stream)))
        for frame, stream in zip(labels.frames, streams)
    ]
    logger.debug("perturbed %d frames with %s", len(per_frame), noise)
    if not per_frame:
        return Predictions((), (), (), (), ())
    seg, back_flow, centerness, offset, fwd_flow = (tuple(column) for column in zip(*per_frame))
    return Predictions(seg, back_flow, centerness, offset, fwd_flow)


# --- Scenario file ---


class _ScenarioHeader(BaseModel):
    format: Literal["bevwarp-scenario"]
    version: Literal[1]
    dt: float
    seed: int
    config: Optional[ScenarioConfig] = None


class _FrameRecord(BaseModel):
    index: int
    ego: Pose2D
    agents: list[list[Union[int, float]]]


def format_scenario(scenario: Scenario) -> str:
    header = _ScenarioHeader(
        format=SCENARIO_FORMAT,
        version=SCENARIO_VERSION,
        dt=scenario.dt,
        seed=scenario.seed,
        config=scenario.config,
    )
    lines = [header.model_dump_json()]
    for frame in scenario.frames:
        record = _FrameRecord(
            index=frame.index,
            ego=frame.ego,
            agents=[agent.to_record() for agent in frame.agents],
        )
        lines.append(record.model_dump_json())
    return "\n".join(lines) + "\n"


def _field_of(error: ValidationError) -> str:
    first = error.errors()[0]
    location = ".".join(str(part) for part in first["loc"]) or "<record>"
    return f"field {location}: {first['msg']}"


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    lines = [(number, line) for number, line in enumerate(text.splitlines(), start=1) if line.strip()]
    if not lines:
        raise ScenarioFormatError(f"{source}: empty scenario file")

    records = []
    for number, line in lines:
        try:
            records.append((number, json.loads(line)))
        except json.JSONDecodeError as e:
            raise ScenarioFormatError(f"{source}:{number}: invalid JSON: {e.msg}") from e

    number, raw_header = records[0]
    try:
        header = _ScenarioHeader.model_validate(raw_header)
    except ValidationError as e:
        raise ScenarioFormatError(f"{source}:{number}: bad header, {_field_of(e)}") from e

    frames = []
    for number, raw in records[1:]:
        try:
            record = _FrameRecord.model_validate(raw)
        except ValidationError as e:
            raise ScenarioFormatError(f"{source}:{number}: {_field_of(e)}") from e
        agents = []
        for position, values in enumerate(record.agents):
            try:
                agents.append(AgentState.from_record(values))
            except (ValidationError, ValueError) as e:
                detail = _field_of(e) if isinstance(e, ValidationError) else str(e)
                raise ScenarioFormatError(f"{source}:{number}: agents.{position}: {detail}") from e
        if len({agent.id for agent in agents}) != len(agents):
            raise ScenarioFormatError(f"{source}:{number}: duplicate agent id")
        frames.append(ScenarioFrame(index=record.index, ego=record.ego, agents=tuple(agents)))

    if not frames:
        raise ScenarioFormatError(f"{source}: no frame records")
    for expected, frame in enumerate(frames):
        if frame.index != expected:
            raise ScenarioFormatError(
                f"{source}: frame index {frame.index} out of order, expected {expected}"
            )
    return Scenario(dt=header.dt, seed=header.seed, frames=tuple(frames), config=header.config)


def write_scenario(scenario: Scenario, path: Union[str, Path]) -> None:
    path = Path(path)
    path.write_text(format_scenario(scenario), encoding="utf-8")
    logger.debug("wrote scenario with %d frames to %s", len(scenario.frames), path)


def read_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"{path}: cannot read scenario: {e.strerror or e}") from e
    return parse_scenario(text, source=str(path))
