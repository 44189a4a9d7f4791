# schemas.py

import math
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

FROZEN = ConfigDict(frozen=True)

Preset = Literal["long", "short"]
Mode = Literal["warp", "hm"]
EgoProfile = Literal["straight", "constant_turn", "stop_and_go"]


def normalize_angle(angle: float) -> float:
    """Wraps an angle to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


# --- 1. Geometry Schemas ---
class Pose2D(BaseModel):
    model_config = FROZEN

    x: float = Field(0.0, allow_inf_nan=False)  # meters
    y: float = Field(0.0, allow_inf_nan=False)  # meters
    yaw: float = Field(0.0, allow_inf_nan=False)  # radians

    @field_validator("yaw")
    @classmethod
    def wrap_yaw(cls, value: float) -> float:
        return normalize_angle(value)


class GridSpec(BaseModel):
    model_config = FROZEN

    height_cells: int = Field(..., gt=0)
    width_cells: int = Field(..., gt=0)
    resolution: float = Field(..., gt=0)  # meters per cell
    anchor: Pose2D = Pose2D()  # world pose of the grid centre (the ego)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_cells, self.width_cells)

    def anchored_at(self, pose: Pose2D) -> "GridSpec":
        return self.model_copy(update={"anchor": pose})


# Canonical BEV windows: 100 m x 100 m at 0.5 m and 30 m x 30 m at 0.15 m
PRESETS: dict[str, GridSpec] = {
    "long": GridSpec(height_cells=200, width_cells=200, resolution=0.5),
    "short": GridSpec(height_cells=200, width_cells=200, resolution=0.15),
}

# Max-pooling kernel roughly the size of one vehicle in each window
POOL_KERNELS: dict[str, int] = {"long": 23, "short": 7}


class Center(BaseModel):
    model_config = FROZEN

    id: int = Field(..., gt=0)
    row: float  # fractional cells
    col: float
    score: float = Field(1.0, ge=0, le=1)


class CenterList(BaseModel):
    model_config = FROZEN

    entries: tuple[Center, ...] = ()

    @field_validator("entries")
    @classmethod
    def unique_ids(cls, entries: tuple[Center, ...]) -> tuple[Center, ...]:
        ids = [entry.id for entry in entries]
        if len(ids) != len(set(ids)):
            raise ValueError("center IDs must be unique")
        return entries

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[int]:
        return [entry.id for entry in self.entries]

    def coords(self) -> np.ndarray:
        """(N, 2) array of (row, col)."""
        if not self.entries:
            return np.zeros((0, 2), dtype=np.float64)
        return np.array([(e.row, e.col) for e in self.entries], dtype=np.float64)

    def by_id(self) -> dict[int, Center]:
        return {entry.id: entry for entry in self.entries}

    def check_bounds(self, shape: tuple[int, int]) -> None:
        height, width = shape
        for entry in self.entries:
            if not (-0.5 <= entry.row < height - 0.5 and -0.5 <= entry.col < width - 0.5):
                raise ValueError(f"center {entry.id} lies outside a {height}x{width} grid")


# --- 2. Scenario Schemas ---
class AgentState(BaseModel):
    model_config = FROZEN

    id: int = Field(..., gt=0)
    pose: Pose2D
    length: float = Field(..., gt=0)  # meters
    width: float = Field(..., gt=0)
    speed: float = Field(0.0, ge=0)  # m/s
    yaw_rate: float = Field(0.0, allow_inf_nan=False)  # rad/s
    spawn_frame: int = Field(0, ge=0)
    despawn_frame: int = Field(..., ge=1)

    @model_validator(mode="after")
    def spawn_before_despawn(self) -> "AgentState":
        if self.spawn_frame >= self.despawn_frame:
            raise ValueError("spawn_frame must be smaller than despawn_frame")
        return self

    def alive_at(self, frame: int) -> bool:
        return self.spawn_frame <= frame < self.despawn_frame

    # Field order of one agent tuple in the scenario file
    def to_record(self) -> list[float]:
        return [
            self.id,
            self.pose.x,
            self.pose.y,
            self.pose.yaw,
            self.length,
            self.width,
            self.speed,
            self.yaw_rate,
            self.spawn_frame,
            self.despawn_frame,
        ]

    @classmethod
    def from_record(cls, record: list[float]) -> "AgentState":
        if len(record) != 10:
            raise ValueError(f"agent tuple needs 10 fields, got {len(record)}")
        agent_id, x, y, yaw, length, width, speed, yaw_rate, spawn, despawn = record
        return cls(
            id=int(agent_id),
            pose=Pose2D(x=x, y=y, yaw=yaw),
            length=length,
            width=width,
            speed=speed,
            yaw_rate=yaw_rate,
            spawn_frame=int(spawn),
            despawn_frame=int(despawn),
        )


class ScenarioConfig(BaseModel):
    model_config = FROZEN

    num_agents: int = Field(10, ge=0)
    num_frames: int = Field(7, ge=1)
    dt: float = Field(0.5, gt=0)  # seconds, 2 Hz
    seed: int = Field(0, ge=0, lt=2**64)
    speed_min: float = Field(2.0, ge=0)
    speed_max: float = Field(10.0, gt=0)
    yaw_rate_max: float = Field(0.2, ge=0)
    length_range: tuple[float, float] = (3.8, 5.2)
    width_range: tuple[float, float] = (1.7, 2.1)
    ego_profile: EgoProfile = "straight"
    ego_speed: float = Field(5.0, ge=0)
    ego_yaw_rate: float = 0.15
    spawn_radius: float = Field(60.0, gt=0)
    min_separation: float = Field(14.0, ge=0)  # keeps footprints a long-preset pooling window apart
    window_half_extent: float = Field(15.0, gt=0)
    max_attempts: int = Field(2000, gt=0)

    @model_validator(mode="after")
    def check_ranges(self) -> "ScenarioConfig":
        if self.speed_min > self.speed_max:
            raise ValueError("speed_min must not exceed speed_max")
        for name in ("length_range", "width_range"):
            low, high = getattr(self, name)
            if not 0 < low <= high:
                raise ValueError(f"{name} must satisfy 0 < low <= high")
        return self


class ScenarioFrame(BaseModel):
    model_config = FROZEN

    index: int = Field(..., ge=0)
    ego: Pose2D
    agents: tuple[AgentState, ...] = ()


class Scenario(BaseModel):
    model_config = FROZEN

    dt: float = Field(0.5, gt=0)
    seed: int = Field(0, ge=0)
    frames: tuple[ScenarioFrame, ...]
    config: Optional[ScenarioConfig] = None


# --- 3. Noise and Label Schemas ---
class NoiseConfig(BaseModel):
    model_config = FROZEN

    flow_sigma: float = Field(0.0, ge=0)  # cells
    boundary_flip_prob: float = Field(0.0, ge=0, le=1)
    instance_dropout_prob: float = Field(0.0, ge=0, le=1)
    false_positive_rate: float = Field(0.0, ge=0)  # blobs per frame
    flow_outlier_prob: float = Field(0.0, ge=0, le=1)
    flow_outlier_sigma: float = Field(12.0, ge=0)  # cells
    seed: int = Field(0, ge=0, lt=2**64)

    @property
    def is_zero(self) -> bool:
        return (
            self.flow_sigma == 0
            and self.boundary_flip_prob == 0
            and self.instance_dropout_prob == 0
            and self.false_positive_rate == 0
            and self.flow_outlier_prob == 0
        )


class LabelConfig(BaseModel):
    model_config = FROZEN

    centerness_sigma: float = Field(3.0, gt=0)  # cells
    flow_threshold: float = Field(0.2, ge=0)  # cells
    min_visible_cells: int = Field(4, ge=1)


# --- 4. Association Schemas ---
class AssocConfig(BaseModel):
    model_config = FROZEN

    pool_kernel: int = Field(23, ge=3)
    center_threshold: float = Field(0.1, ge=0, le=1)
    seg_binarize_threshold: float = Field(0.5, ge=0, le=1)
    gating_radius: float = Field(8.0, gt=0)  # cells, HM only
    mode: Mode = "warp"

    @field_validator("pool_kernel")
    @classmethod
    def odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("pool_kernel must be odd")
        return value

    @classmethod
    def for_preset(cls, preset: str, **overrides) -> "AssocConfig":
        return cls(pool_kernel=POOL_KERNELS[preset], **overrides)


# --- 5. Loss Schemas ---
class FixedWeighting(BaseModel):
    model_config = FROZEN

    kind: Literal["fixed"] = "fixed"
    lambda_seg: float = Field(1.0, ge=0)
    lambda_flow: float = Field(1.0, ge=0)


class UncertaintyWeighting(BaseModel):
    model_config = FROZEN

    kind: Literal["uncertainty"] = "uncertainty"
    s_seg: float = 0.0  # log-variance of the segmentation task
    s_flow: float = 0.0


class LossConfig(BaseModel):
    model_config = FROZEN

    top_k_fraction: float = Field(0.25, gt=0, le=1)
    gamma: float = Field(0.95, gt=0, le=1)  # future discount
    weighting: Annotated[
        Union[FixedWeighting, UncertaintyWeighting], Field(discriminator="kind")
    ] = FixedWeighting()
    ce_eps: float = Field(1e-6, gt=0, lt=0.5)


# --- 6. Experiment Schemas ---
class ExperimentConfig(BaseModel):
    model_config = FROZEN

    preset: Preset = "long"
    t_in: int = Field(3, ge=1)
    horizons: tuple[Literal[4, 16], ...] = Field((4, 16), min_length=1)  # 2 s / 8 s at 2 Hz
    num_agents: int = Field(10, ge=0)
    noise: NoiseConfig = NoiseConfig()
    assoc: Optional[AssocConfig] = None  # None -> preset defaults
    seeds: tuple[int, ...] = Field((0, 1, 2, 3, 4), min_length=1)

    @property
    def grid(self) -> GridSpec:
        return PRESETS[self.preset]

    @property
    def assoc_config(self) -> AssocConfig:
        return self.assoc if self.assoc is not None else AssocConfig.for_preset(self.preset)


# --- 7. Metrics Schemas ---
class FrameMetrics(BaseModel):
    frame: int
    tp_count: int = Field(..., ge=0)
    fp_count: int = Field(..., ge=0)
    fn_count: int = Field(..., ge=0)
    soft_iou_sum: float = Field(..., ge=0)
    pq: float = Field(..., ge=0, le=1)


class StageTiming(BaseModel):
    stage: str
    frame: int
    microseconds: int = Field(..., ge=0)

    def to_line(self) -> str:
        return f"stage={self.stage} frame={self.frame} us={self.microseconds}"


class MetricsReport(BaseModel):
    iou: float = Field(..., ge=0, le=1)
    vpq: float = Field(..., ge=0, le=1)
    sq: float = Field(..., ge=0, le=1)  # mean IoU of consistent true positives
    rq: float = Field(..., ge=0, le=1)  # TP / (TP + FP/2 + FN/2) over the sequence
    per_frame: list[FrameMetrics]
    runtime: Optional[list[StageTiming]] = None

    def to_lines(self) -> list[str]:
        lines = [
            f"iou={self.iou:.4f}",
            f"vpq={self.vpq:.4f}",
            f"sq={self.sq:.4f}",
            f"rq={self.rq:.4f}",
        ]
        for frame in self.per_frame:
            lines.append(
                f"frame={frame.frame} tp={frame.tp_count} fp={frame.fp_count} "
                f"fn={frame.fn_count} soft_iou_sum={frame.soft_iou_sum:.6f} pq={frame.pq:.4f}"
            )
        for timing in self.runtime or []:
            lines.append(timing.to_line())
        return lines


# --- 8. Artifact Manifests ---
class LabelManifest(BaseModel):
    kind: Literal["labels"] = "labels"
    frame_count: int = Field(..., ge=0)
    grid: GridSpec
    egos: tuple[Pose2D, ...]
    modalities: tuple[str, ...]
    label_config: LabelConfig
    scenario_seed: int = 0


class PredictionManifest(BaseModel):
    kind: Literal["predictions"] = "predictions"
    frame_count: int = Field(..., ge=0)
    grid: GridSpec
    modalities: tuple[str, ...]
    noise: NoiseConfig


class InstanceManifest(BaseModel):
    kind: Literal["instances"] = "instances"
    frame_count: int = Field(..., ge=0)
    first_frame: int = Field(..., ge=0)  # scenario index of t=0
    grid: GridSpec
    mode: Mode
    assoc: AssocConfig
