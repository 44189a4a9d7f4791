"""Instance association over the predicted horizon.

Two post-processing pipelines share this module:

* ``warp``: instance centres are extracted once, at the present frame, and
  every later frame inherits IDs by following the predicted backward
  centripetal flow into the previous frame's instance map.
* ``hm``: centres are extracted in every frame, pixels are clustered to
  centres through the offset field and centres are linked across frames with
  the Hungarian algorithm on forward-flow projections.
"""

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .exceptions import AssociationError
from .grids import FlowGrid, InstanceGrid, SegGrid
from .schemas import AssocConfig, Center, CenterList, StageTiming

logger = logging.getLogger(__name__)

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class IdCounter:
    """Hands out fresh instance IDs; the only state threaded through a sequence."""

    def __init__(self, start: int = 1):
        self._next = start

    @property
    def next_id(self) -> int:
        return self._next

    def take(self) -> int:
        value = self._next
        self._next += 1
        return value

    def reserve_above(self, used: int) -> None:
        self._next = max(self._next, int(used) + 1)


@dataclass
class PipelineResult:
    instances: list[InstanceGrid]
    timings: list[StageTiming] = field(default_factory=list)

    def timing_lines(self) -> list[str]:
        return [timing.to_line() for timing in self.timings]


@contextmanager
def _stage(timings: Optional[list], name: str, frame: int):
    started = time.perf_counter_ns()
    yield
    if timings is not None:
        elapsed = (time.perf_counter_ns() - started) // 1000
        timings.append(StageTiming(stage=name, frame=frame, microseconds=elapsed))


# --- Centres ---


def extract_centers(seg: SegGrid, cfg: AssocConfig) -> CenterList:
    """Local maxima of ``seg`` under a k x k max-pool, above the threshold.

    Tied maxima are resolved in raster order. A flat top (touching cells
    with the same maximal value) yields one centre at its top-left-most
    cell, and a flat top is dropped when any of its cells lies within the
    k x k window of a flat top already kept. IDs are 1..n in raster order.
    """
    values = seg.values.astype(np.float64)
    pooled = ndimage.maximum_filter(values, size=cfg.pool_kernel, mode="constant", cval=-np.inf)
    candidates = (values == pooled) & (values >= cfg.center_threshold)
    if not candidates.any():
        return CenterList()

    plateaus, count = ndimage.label(candidates, structure=_EIGHT_CONNECTED)
    labels = np.arange(1, count + 1)
    linear = np.arange(values.size).reshape(values.shape)
    firsts = np.asarray(ndimage.minimum(linear, labels=plateaus, index=labels), dtype=np.int64)
    boxes = ndimage.find_objects(plateaus)

    half = cfg.pool_kernel // 2
    window = np.ones((cfg.pool_kernel, cfg.pool_kernel), dtype=bool)
    height, width = values.shape
    blocked = np.zeros(values.shape, dtype=bool)
    kept: list[int] = []
    for label in labels[np.argsort(firsts)]:
        rows, cols = boxes[label - 1]
        own = plateaus[rows, cols] == label
        if blocked[rows, cols][own].any():
            continue
        kept.append(int(firsts[label - 1]))
        r0, r1 = max(rows.start - half, 0), min(rows.stop + half, height)
        c0, c1 = max(cols.start - half, 0), min(cols.stop + half, width)
        blocked[r0:r1, c0:c1] |= ndimage.binary_dilation(plateaus[r0:r1, c0:c1] == label, structure=window)

    centers = []
    for i, index in enumerate(kept):
        r, c = np.unravel_index(index, values.shape)
        centers.append(Center(id=i + 1, row=float(r), col=float(c), score=float(values[r, c])))
    return CenterList(entries=centers)


# --- Component fallback shared by both pipelines ---


def _resolve_components(ids: np.ndarray, fg: np.ndarray, counter: IdCounter) -> np.ndarray:
    """Fills unlabeled foreground per 8-connected component.

    A component inherits its most frequent assigned ID (ties go to the ID
    whose first cell comes first in raster order); a component with no
    assigned cell gets a fresh ID.
    """
    unlabeled = fg & (ids == 0)
    if not unlabeled.any():
        return ids

    components, count = ndimage.label(fg, structure=_EIGHT_CONNECTED)
    fill = np.zeros(count + 1, dtype=np.int64)

    labeled = fg & (ids != 0)
    if labeled.any():
        comp = components[labeled]
        owner = ids[labeled]
        linear = np.flatnonzero(labeled)
        pairs, first_index, counts = np.unique(
            np.stack([comp, owner], axis=1), axis=0, return_index=True, return_counts=True
        )
        first_cell = linear[first_index]
        order = np.lexsort((first_cell, -counts, pairs[:, 0]))
        pairs = pairs[order]
        leading = np.ones(len(pairs), dtype=bool)
        leading[1:] = pairs[1:, 0] != pairs[:-1, 0]
        fill[pairs[leading, 0]] = pairs[leading, 1]

    for comp in np.unique(components[unlabeled]):
        if fill[comp] == 0:
            fill[comp] = counter.take()

    out = ids.copy()
    out[unlabeled] = fill[components[unlabeled]]
    return out


# --- Warp pipeline ---


def _flow_destinations(fg: np.ndarray, flow: FlowGrid):
    rows, cols = np.nonzero(fg)
    dest_rows = rows + flow.dy[rows, cols].astype(np.float64)
    dest_cols = cols + flow.dx[rows, cols].astype(np.float64)
    return rows, cols, dest_rows, dest_cols


def _rounded_inside(dest_rows, dest_cols, shape):
    height, width = shape
    r = np.rint(dest_rows).astype(np.int64)
    c = np.rint(dest_cols).astype(np.int64)
    inside = (r >= 0) & (r < height) & (c >= 0) & (c < width)
    return r, c, inside


def assign_first_frame(
    seg_t0: SegGrid,
    back_flow_t0: FlowGrid,
    centers_prev: CenterList,
    cfg: AssocConfig,
    seg_prev: Optional[SegGrid] = None,
    id_counter: Optional[IdCounter] = None,
) -> InstanceGrid:
    """Labels the first predicted frame from the present frame's centres.

    Each foreground pixel follows its backward flow and takes the ID of the
    nearest centre (ties go to the smaller ID). When ``seg_prev`` is given,
    pixels whose destination is background in the present frame belong to
    instances that just appeared and are resolved per component instead.
    """
    if seg_t0.shape != back_flow_t0.shape:
        raise AssociationError(f"segmentation {seg_t0.shape} and flow {back_flow_t0.shape} differ")
    try:
        centers_prev.check_bounds(seg_t0.shape)
    except ValueError as e:
        raise AssociationError(str(e)) from e
    counter = id_counter if id_counter is not None else IdCounter()
    fg = seg_t0.binarize(cfg.seg_binarize_threshold)
    ids = np.zeros(seg_t0.shape, dtype=np.int64)

    centers = sorted(centers_prev.entries, key=lambda center: center.id)
    if centers:
        counter.reserve_above(centers[-1].id)
    if centers and fg.any():
        rows, cols, dest_rows, dest_cols = _flow_destinations(fg, back_flow_t0)
        landed = np.ones(rows.size, dtype=bool)
        if seg_prev is not None:
            r, c, inside = _rounded_inside(dest_rows, dest_cols, seg_t0.shape)
            prev_fg = seg_prev.binarize(cfg.seg_binarize_threshold)
            landed = inside.copy()
            landed[inside] = prev_fg[r[inside], c[inside]]
        if landed.any():
            coords = np.array([(center.row, center.col) for center in centers])
            center_ids = np.array([center.id for center in centers], dtype=np.int64)
            distances = cdist(np.stack([dest_rows[landed], dest_cols[landed]], axis=1), coords)
            ids[rows[landed], cols[landed]] = center_ids[np.argmin(distances, axis=1)]

    return InstanceGrid(_resolve_components(ids, fg, counter))


def warp_associate(
    seg_t: SegGrid,
    back_flow_t: FlowGrid,
    inst_prev: InstanceGrid,
    cfg: AssocConfig,
    id_counter: Optional[IdCounter] = None,
) -> InstanceGrid:
    """Propagates IDs one frame forward by a nearest-cell lookup along the flow."""
    if not (seg_t.shape == back_flow_t.shape == inst_prev.shape):
        raise AssociationError(
            f"shape mismatch: seg {seg_t.shape}, flow {back_flow_t.shape}, previous {inst_prev.shape}"
        )
    counter = id_counter if id_counter is not None else IdCounter()
    if inst_prev.foreground.any():
        counter.reserve_above(inst_prev.ids.max())

    fg = seg_t.binarize(cfg.seg_binarize_threshold)
    ids = np.zeros(seg_t.shape, dtype=np.int64)
    if fg.any():
        rows, cols, dest_rows, dest_cols = _flow_destinations(fg, back_flow_t)
        r, c, inside = _rounded_inside(dest_rows, dest_cols, seg_t.shape)
        inherited = np.zeros(rows.size, dtype=np.int64)
        inherited[inside] = inst_prev.ids[r[inside], c[inside]]
        ids[rows, cols] = inherited
    return InstanceGrid(_resolve_components(ids, fg, counter))


# --- Hungarian pipeline ---


def _optimal_cost(cost: np.ndarray, rows: list[int], cols: list[int], needed: int) -> float:
    if needed == 0:
        return 0.0
    if min(len(rows), len(cols)) < needed:
        return np.inf
    sub = cost[np.ix_(rows, cols)]
    r, c = linear_sum_assignment(sub)
    return float(sub[r, c].sum())


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment as (row, col) pairs sorted by row.

    Among several optimal assignments the lexicographically smallest pair
    list wins: rows are decided in order, each taking the smallest column
    that still completes to an optimal assignment, or staying unmatched
    when none does.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise AssociationError(f"cost matrix must be 2D, got shape {cost.shape}")
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise AssociationError("cost matrix contains non-finite entries")
    if np.any(cost < 0):
        raise AssociationError("cost matrix contains negative entries")

    n, m = cost.shape
    size = min(n, m)
    best = _optimal_cost(cost, list(range(n)), list(range(m)), size)
    tolerance = 1e-9 * max(1.0, abs(best))

    pairs: list[tuple[int, int]] = []
    spent = 0.0
    free_cols = list(range(m))
    for i in range(n):
        if len(pairs) == size:
            break
        rest_rows = list(range(i + 1, n))
        for j in free_cols:
            rest_cols = [col for col in free_cols if col != j]
            total = spent + cost[i, j] + _optimal_cost(cost, rest_rows, rest_cols, size - len(pairs) - 1)
            if total <= best + tolerance:
                pairs.append((i, j))
                spent += cost[i, j]
                free_cols = rest_cols
                break
    return pairs


def cluster_to_centers(
    seg: SegGrid, offset: FlowGrid, centers: CenterList, cfg: AssocConfig
) -> np.ndarray:
    """Frame-local instance map: each pixel joins the centre nearest to pixel + offset.

    Foreground with no centre at all is split into connected components,
    numbered after the centre IDs.
    """
    fg = seg.binarize(cfg.seg_binarize_threshold)
    ids = np.zeros(seg.shape, dtype=np.int64)
    if not fg.any():
        return ids
    if len(centers) == 0:
        components, _ = ndimage.label(fg, structure=_EIGHT_CONNECTED)
        return components.astype(np.int64)
    rows, cols, target_rows, target_cols = _flow_destinations(fg, offset)
    distances = cdist(np.stack([target_rows, target_cols], axis=1), centers.coords())
    center_ids = np.array(centers.ids(), dtype=np.int64)
    ids[rows, cols] = center_ids[np.argmin(distances, axis=1)]
    return ids


def _project(tracks: list[tuple[int, float, float]], fwd_flow: FlowGrid) -> np.ndarray:
    height, width = fwd_flow.shape
    projected = np.zeros((len(tracks), 2), dtype=np.float64)
    for i, (_, row, col) in enumerate(tracks):
        r = min(max(int(np.rint(row)), 0), height - 1)
        c = min(max(int(np.rint(col)), 0), width - 1)
        projected[i] = (row + float(fwd_flow.dy[r, c]), col + float(fwd_flow.dx[r, c]))
    return projected


def match_centers(
    tracks: list[tuple[int, float, float]],
    fwd_flow_prev: Optional[FlowGrid],
    centers: CenterList,
    cfg: AssocConfig,
    counter: IdCounter,
) -> dict[int, int]:
    """Maps frame-local centre IDs to track IDs; unmatched centres open new tracks."""
    mapping: dict[int, int] = {}
    if tracks and len(centers) and fwd_flow_prev is not None:
        projected = _project(tracks, fwd_flow_prev)
        cost = cdist(projected, centers.coords())
        for track_index, center_index in hungarian(cost):
            if cost[track_index, center_index] <= cfg.gating_radius:
                mapping[centers.entries[center_index].id] = tracks[track_index][0]
    for center in centers.entries:
        if center.id not in mapping:
            mapping[center.id] = counter.take()
    return mapping


def hm_associate(
    seg_seq: Sequence[SegGrid],
    centerness_seq: Sequence[SegGrid],
    offset_seq: Sequence[FlowGrid],
    fwd_flow_seq: Sequence[FlowGrid],
    cfg: AssocConfig,
    id_counter: Optional[IdCounter] = None,
    timings: Optional[list[StageTiming]] = None,
) -> list[InstanceGrid]:
    lengths = {len(seg_seq), len(centerness_seq), len(offset_seq), len(fwd_flow_seq)}
    if len(lengths) != 1:
        raise AssociationError("HM inputs must all cover the same frames")
    counter = id_counter if id_counter is not None else IdCounter()

    instances: list[InstanceGrid] = []
    tracks: list[tuple[int, float, float]] = []
    for t, (seg, centerness, offset) in enumerate(zip(seg_seq, centerness_seq, offset_seq)):
        with _stage(timings, "centers", t):
            centers = extract_centers(centerness, cfg)
        with _stage(timings, "cluster", t):
            local = cluster_to_centers(seg, offset, centers, cfg)
        with _stage(timings, "match", t):
            mapping = match_centers(tracks, fwd_flow_seq[t - 1] if t > 0 else None, centers, cfg, counter)
            top = int(local.max()) if local.size else 0
            lookup = np.zeros(top + 1, dtype=np.int64)
            for local_id, track_id in mapping.items():
                if local_id <= top:
                    lookup[local_id] = track_id
            # components that had no centre start tracks without a position
            for local_id in np.unique(local[local > 0]):
                if lookup[local_id] == 0:
                    lookup[local_id] = counter.take()
            instances.append(InstanceGrid(lookup[local]))
            by_local = centers.by_id()
            tracks = [(mapping[cid], by_local[cid].row, by_local[cid].col) for cid in sorted(mapping)]
    return instances


# --- Pipeline driver ---


def _check_sequences(**sequences) -> int:
    lengths = {name: len(seq) for name, seq in sequences.items() if seq is not None}
    if len(set(lengths.values())) > 1:
        raise AssociationError(f"sequence lengths differ: {lengths}")
    return next(iter(lengths.values()), 0)


def run_pipeline(
    seg: Sequence[SegGrid],
    flow: Optional[Sequence[FlowGrid]],
    cfg: AssocConfig,
    *,
    seg_prev: Optional[SegGrid] = None,
    centerness: Optional[Sequence[SegGrid]] = None,
    offset: Optional[Sequence[FlowGrid]] = None,
) -> PipelineResult:
    """Runs the configured pipeline over frames 0..T_out-1.

    ``flow`` is the backward centripetal flow in warp mode and the forward
    flow in HM mode. Warp mode extracts its centres from ``seg_prev``, the
    segmentation of the present frame (t = -1).
    """
    if flow is None:
        raise AssociationError(f"{cfg.mode} mode needs a flow sequence")
    timings: list[StageTiming] = []

    if cfg.mode == "warp":
        if seg_prev is None:
            raise AssociationError("warp mode needs the present-frame segmentation")
        frames = _check_sequences(seg=seg, flow=flow)
        instances: list[InstanceGrid] = []
        counter = IdCounter()
        with _stage(timings, "centers", -1):
            centers = extract_centers(seg_prev, cfg)
        for t in range(frames):
            if t == 0:
                with _stage(timings, "assign", 0):
                    instances.append(
                        assign_first_frame(seg[0], flow[0], centers, cfg, seg_prev=seg_prev, id_counter=counter)
                    )
            else:
                with _stage(timings, "warp", t):
                    instances.append(warp_associate(seg[t], flow[t], instances[-1], cfg, id_counter=counter))
    else:
        if centerness is None or offset is None:
            raise AssociationError("hm mode needs centerness and offset sequences")
        _check_sequences(seg=seg, flow=flow, centerness=centerness, offset=offset)
        instances = hm_associate(seg, centerness, offset, flow, cfg, timings=timings)

    logger.info(
        "%s pipeline: %d frames, %d stage timings, %d us total",
        cfg.mode,
        len(instances),
        len(timings),
        sum(timing.microseconds for timing in timings),
    )
    return PipelineResult(instances=instances, timings=timings)
