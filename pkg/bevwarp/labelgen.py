"""Ground-truth BEV labels rendered directly in the ego-anchored window.

Every frame is rasterised once in a window anchored at that frame's ego pose;
flows are computed from the instance maps of adjacent frames without any
intermediate warping, so stationary agents keep bit-identical footprints.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .exceptions import LabelError
from .geometry import cell_centers_world, world_to_grid_array
from .grids import FlowGrid, InstanceGrid, SegGrid
from .schemas import AgentState, Center, CenterList, GridSpec, LabelConfig, Pose2D, Scenario

logger = logging.getLogger(__name__)

# Half-open rectangle test [-L/2, L/2) shifted by this much, so cell centres
# sitting exactly on an edge are classified the same way under any rotation.
_EDGE_EPS = 1e-9

MODALITIES = ("seg", "inst", "centerness", "offset", "fwd_flow", "back_flow")


@dataclass(frozen=True)
class LabelFrame:
    ego: Pose2D
    seg: SegGrid
    inst: InstanceGrid
    centers: CenterList
    centerness: SegGrid
    offset: FlowGrid
    fwd_flow: FlowGrid
    back_flow: FlowGrid


@dataclass(frozen=True)
class LabelSet:
    grid: GridSpec
    config: LabelConfig
    frames: tuple[LabelFrame, ...]

    def __len__(self) -> int:
        return len(self.frames)


# --- Rasterisation ---


def _agent_corners(agent: AgentState) -> np.ndarray:
    half_l, half_w = agent.length / 2.0, agent.width / 2.0
    local = np.array([[half_l, half_w], [half_l, -half_w], [-half_l, -half_w], [-half_l, half_w]])
    cos_a, sin_a = math.cos(agent.pose.yaw), math.sin(agent.pose.yaw)
    x = agent.pose.x + cos_a * local[:, 0] - sin_a * local[:, 1]
    y = agent.pose.y + sin_a * local[:, 0] + cos_a * local[:, 1]
    return np.stack([x, y], axis=1)


def rasterize_frame(
    agents: Iterable[AgentState], ego: Pose2D, spec: GridSpec
) -> tuple[InstanceGrid, SegGrid]:
    """Paints every agent's oriented rectangle into a window anchored at ``ego``.

    A cell belongs to an agent when its centre lies inside the rectangle;
    where rectangles overlap the smaller agent ID wins.
    """
    spec = spec.anchored_at(ego)
    height, width = spec.shape
    ids = np.zeros(spec.shape, dtype=np.int64)
    agents = sorted(agents, key=lambda agent: agent.id, reverse=True)
    if not agents:
        return InstanceGrid(ids), SegGrid(ids.astype(np.float32))

    cell_x, cell_y = cell_centers_world(spec)
    for agent in agents:
        rows, cols, _ = world_to_grid_array(_agent_corners(agent), spec)
        r0, r1 = max(0, math.floor(rows.min())), min(height, math.ceil(rows.max()) + 1)
        c0, c1 = max(0, math.floor(cols.min())), min(width, math.ceil(cols.max()) + 1)
        if r0 >= r1 or c0 >= c1:
            continue

        dx = cell_x[r0:r1, c0:c1] - agent.pose.x
        dy = cell_y[r0:r1, c0:c1] - agent.pose.y
        cos_a, sin_a = math.cos(agent.pose.yaw), math.sin(agent.pose.yaw)
        local_x = cos_a * dx + sin_a * dy
        local_y = -sin_a * dx + cos_a * dy
        half_l, half_w = agent.length / 2.0, agent.width / 2.0
        inside = (
            (local_x >= -half_l - _EDGE_EPS)
            & (local_x < half_l - _EDGE_EPS)
            & (local_y >= -half_w - _EDGE_EPS)
            & (local_y < half_w - _EDGE_EPS)
        )
        ids[r0:r1, c0:c1][inside] = agent.id

    return InstanceGrid(ids), SegGrid((ids != 0).astype(np.float32))


def drop_small_instances(inst: InstanceGrid, min_cells: int) -> InstanceGrid:
    """Removes instances whose visible footprint has fewer than ``min_cells`` cells."""
    if min_cells <= 1 or not inst.foreground.any():
        return inst
    ids = inst.ids
    counts = np.bincount(ids.ravel())
    small = np.nonzero(counts < min_cells)[0]
    small = small[small != 0]
    if small.size == 0:
        return inst
    return InstanceGrid(np.where(np.isin(ids, small), 0, ids))


# --- Per-frame modalities ---


def compute_centers(inst: InstanceGrid) -> CenterList:
    """Centroid of the occupied cells of every instance, sorted by ID."""
    fg = inst.foreground
    if not fg.any():
        return CenterList()
    rows, cols = np.nonzero(fg)
    unique, inverse, counts = np.unique(inst.ids[fg], return_inverse=True, return_counts=True)
    sum_rows = np.bincount(inverse, weights=rows)
    sum_cols = np.bincount(inverse, weights=cols)
    return CenterList(
        entries=[
            Center(id=int(instance_id), row=sum_rows[i] / counts[i], col=sum_cols[i] / counts[i])
            for i, instance_id in enumerate(unique)
        ]
    )


def _targets_for(inst: InstanceGrid, centers: CenterList, rows: np.ndarray, cols: np.ndarray):
    """Centre coordinates of the instance owning each listed cell."""
    ids = inst.ids[rows, cols]
    center_ids = np.array(centers.ids(), dtype=np.int64)
    order = np.argsort(center_ids)
    center_ids = center_ids[order]
    coords = centers.coords()[order]
    position = np.searchsorted(center_ids, ids)
    position = np.clip(position, 0, max(len(center_ids) - 1, 0))
    if len(center_ids) == 0 or np.any(center_ids[position] != ids):
        missing = sorted(set(ids.tolist()) - set(center_ids.tolist()))
        raise LabelError(f"instances {missing} have no center entry")
    return coords[position, 0], coords[position, 1]


def compute_centerness(inst: InstanceGrid, centers: CenterList, sigma: float) -> SegGrid:
    """Gaussian heatmap around each instance centre, clamped to the instance mask.

    The peak sits on the cell nearest to the centroid (``numpy.rint``), so
    that cell holds exactly 1.0.
    """
    if sigma <= 0:
        raise LabelError("centerness sigma must be positive")
    values = np.zeros(inst.shape, dtype=np.float64)
    rows, cols = np.nonzero(inst.foreground)
    if rows.size:
        target_rows, target_cols = _targets_for(inst, centers, rows, cols)
        d2 = (rows - np.rint(target_rows)) ** 2 + (cols - np.rint(target_cols)) ** 2
        values[rows, cols] = np.exp(-d2 / (2.0 * sigma**2))
    return SegGrid(values)


def compute_offsets(inst: InstanceGrid, centers: CenterList) -> FlowGrid:
    """Per-pixel vector to the pixel's own instance centre (same frame)."""
    dy = np.zeros(inst.shape, dtype=np.float64)
    dx = np.zeros(inst.shape, dtype=np.float64)
    rows, cols = np.nonzero(inst.foreground)
    if rows.size:
        target_rows, target_cols = _targets_for(inst, centers, rows, cols)
        dy[rows, cols] = target_rows - rows
        dx[rows, cols] = target_cols - cols
    return FlowGrid(dy, dx)


def compute_forward_flow(inst_t: InstanceGrid, inst_next: InstanceGrid) -> FlowGrid:
    """Centre displacement t -> t+1 broadcast to every pixel of the instance."""
    dy = np.zeros(inst_t.shape, dtype=np.float64)
    dx = np.zeros(inst_t.shape, dtype=np.float64)
    current = compute_centers(inst_t).by_id()
    following = compute_centers(inst_next).by_id()
    for instance_id, center in current.items():
        nxt = following.get(instance_id)
        if nxt is None:
            continue
        mask = inst_t.ids == instance_id
        dy[mask] = nxt.row - center.row
        dx[mask] = nxt.col - center.col
    return FlowGrid(dy, dx)


def compute_backward_centripetal_flow(
    inst_t: InstanceGrid, inst_prev: Optional[InstanceGrid], min_displacement: float = 0.0
) -> FlowGrid:
    """Vector from each foreground pixel at t to its instance's centre at t-1.

    Instances absent at t-1 point to their own centre at t instead. When
    the centre moved by less than ``min_displacement`` cells the own centre is
    used as well, which is how label thresholding reaches this field.
    """
    dy = np.zeros(inst_t.shape, dtype=np.float64)
    dx = np.zeros(inst_t.shape, dtype=np.float64)
    current = compute_centers(inst_t).by_id()
    previous = compute_centers(inst_prev).by_id() if inst_prev is not None else {}
    for instance_id, center in current.items():
        target = previous.get(instance_id, center)
        if math.hypot(target.row - center.row, target.col - center.col) < min_displacement:
            target = center
        rows, cols = np.nonzero(inst_t.ids == instance_id)
        dy[rows, cols] = target.row - rows
        dx[rows, cols] = target.col - cols
    return FlowGrid(dy, dx)


def threshold_flow(flow: FlowGrid, eps: float) -> FlowGrid:
    """Zeroes every vector shorter than ``eps`` cells."""
    if eps < 0:
        raise LabelError("flow threshold must be non-negative")
    if eps == 0:
        return flow
    keep = flow.magnitude() >= eps
    return FlowGrid(np.where(keep, flow.dy, 0.0), np.where(keep, flow.dx, 0.0))


# --- Whole scenarios ---


def generate_labels(
    scenario: Scenario, spec: GridSpec, config: Optional[LabelConfig] = None
) -> LabelSet:
    """Renders all label modalities for every frame of a scenario."""
    config = config or LabelConfig()
    instances: list[InstanceGrid] = []
    for frame in scenario.frames:
        agents = [agent for agent in frame.agents if agent.alive_at(frame.index)]
        inst, _ = rasterize_frame(agents, frame.ego, spec)
        instances.append(drop_small_instances(inst, config.min_visible_cells))

    frames = []
    for t, (frame, inst) in enumerate(zip(scenario.frames, instances)):
        centers = compute_centers(inst)
        if t + 1 < len(instances):
            fwd_flow = threshold_flow(compute_forward_flow(inst, instances[t + 1]), config.flow_threshold)
        else:
            fwd_flow = FlowGrid.zeros(inst.shape)
        frames.append(
            LabelFrame(
                ego=frame.ego,
                seg=inst.to_seg(),
                inst=inst,
                centers=centers,
                centerness=compute_centerness(inst, centers, config.centerness_sigma),
                offset=compute_offsets(inst, centers),
                fwd_flow=fwd_flow,
                back_flow=compute_backward_centripetal_flow(
                    inst, instances[t - 1] if t > 0 else None, config.flow_threshold
                ),
            )
        )
    logger.info(
        "generated labels for %d frames (%dx%d @ %.2f m)",
        len(frames),
        spec.height_cells,
        spec.width_cells,
        spec.resolution,
    )
    return LabelSet(grid=spec, config=config, frames=tuple(frames))
