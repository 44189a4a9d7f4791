import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import MetricsError
from .grids import InstanceGrid, SegGrid
from .schemas import FrameMetrics, MetricsReport, StageTiming

logger = logging.getLogger(__name__)

# A pred/gt pair is a true positive when its IoU is strictly above this
MATCH_IOU = 0.5


def _mask(grid, threshold: float) -> np.ndarray:
    if isinstance(grid, InstanceGrid):
        return grid.foreground
    if isinstance(grid, SegGrid):
        return grid.binarize(threshold)
    return np.asarray(grid, dtype=bool)


def _check_lengths(pred: Sequence, gt: Sequence) -> None:
    if len(pred) != len(gt):
        raise MetricsError(f"sequence lengths differ: {len(pred)} predicted vs {len(gt)} ground truth")
    if len(gt) == 0:
        raise MetricsError("cannot score an empty sequence")
    for t, (p, g) in enumerate(zip(pred, gt)):
        if p.shape != g.shape:
            raise MetricsError(f"frame {t}: shapes differ, {p.shape} vs {g.shape}")


def iou_seq(pred: Sequence, gt: Sequence, threshold: float = 0.5) -> float:
    """Foreground IoU averaged over frames; a frame with an empty union scores 1."""
    _check_lengths(pred, gt)
    scores = []
    for p, g in zip(pred, gt):
        p_mask, g_mask = _mask(p, threshold), _mask(g, threshold)
        union = np.count_nonzero(p_mask | g_mask)
        scores.append(1.0 if union == 0 else np.count_nonzero(p_mask & g_mask) / union)
    return float(sum(scores) / len(scores))


@dataclass
class PanopticMatch:
    tp: list[tuple[int, int, float]] = field(default_factory=list)  # (pred id, gt id, iou)
    fp: list[int] = field(default_factory=list)
    fn: list[int] = field(default_factory=list)


def panoptic_match(pred: InstanceGrid, gt: InstanceGrid) -> PanopticMatch:
    """Matches instances of one frame; IoU > 0.5 makes a pair unique by construction."""
    if pred.shape != gt.shape:
        raise MetricsError(f"shapes differ, {pred.shape} vs {gt.shape}")
    p = pred.ids.ravel()
    g = gt.ids.ravel()
    pred_ids, pred_areas = np.unique(p[p != 0], return_counts=True)
    gt_ids, gt_areas = np.unique(g[g != 0], return_counts=True)
    pred_area = dict(zip(pred_ids.tolist(), pred_areas.tolist()))
    gt_area = dict(zip(gt_ids.tolist(), gt_areas.tolist()))

    both = (p != 0) & (g != 0)
    match = PanopticMatch()
    if both.any():
        pairs, intersections = np.unique(np.stack([p[both], g[both]], axis=1), axis=0, return_counts=True)
        for (pred_id, gt_id), inter in zip(pairs.tolist(), intersections.tolist()):
            iou = inter / (pred_area[pred_id] + gt_area[gt_id] - inter)
            if iou > MATCH_IOU:
                match.tp.append((pred_id, gt_id, iou))
    match.tp.sort(key=lambda pair: pair[1])
    matched_pred = {pair[0] for pair in match.tp}
    matched_gt = {pair[1] for pair in match.tp}
    match.fp = [i for i in pred_area if i not in matched_pred]
    match.fn = [i for i in gt_area if i not in matched_gt]
    return match


@dataclass
class VpqResult:
    vpq: float
    sq: float
    rq: float
    per_frame: list[FrameMetrics]


def vpq_seq(pred: Sequence[InstanceGrid], gt: Sequence[InstanceGrid]) -> VpqResult:
    """Video panoptic quality with ID consistency.

    The first time a GT instance is matched, its predicted ID is remembered;
    a later match to a different predicted ID is an ID switch and counts as
    one false positive plus one false negative.
    """
    _check_lengths(pred, gt)
    identity: dict[int, int] = {}
    per_frame: list[FrameMetrics] = []
    total_tp = total_fp = total_fn = 0
    total_iou = 0.0

    for t, (p, g) in enumerate(zip(pred, gt)):
        match = panoptic_match(p, g)
        tp, fp, fn = 0, len(match.fp), len(match.fn)
        iou_sum = 0.0
        for pred_id, gt_id, iou in match.tp:
            known = identity.setdefault(gt_id, pred_id)
            if known != pred_id:
                fp += 1
                fn += 1
                continue
            tp += 1
            iou_sum += iou
        denominator = tp + 0.5 * fp + 0.5 * fn
        pq = 1.0 if denominator == 0 else iou_sum / denominator
        per_frame.append(
            FrameMetrics(frame=t, tp_count=tp, fp_count=fp, fn_count=fn, soft_iou_sum=iou_sum, pq=pq)
        )
        total_tp, total_fp, total_fn = total_tp + tp, total_fp + fp, total_fn + fn
        total_iou += iou_sum

    vpq = sum(frame.pq for frame in per_frame) / len(per_frame)
    recognition = total_tp + 0.5 * total_fp + 0.5 * total_fn
    if recognition == 0:
        sq, rq = 1.0, 1.0
    else:
        sq = total_iou / total_tp if total_tp else 0.0
        rq = total_tp / recognition
    return VpqResult(vpq=float(vpq), sq=float(sq), rq=float(rq), per_frame=per_frame)


def evaluate(
    pred: Sequence[InstanceGrid],
    gt: Sequence[InstanceGrid],
    runtime: Optional[list[StageTiming]] = None,
) -> MetricsReport:
    """IoU on foreground plus VPQ on instances, in one report."""
    iou = iou_seq(pred, gt)
    result = vpq_seq(pred, gt)
    logger.info("evaluated %d frames: iou=%.4f vpq=%.4f", len(gt), iou, result.vpq)
    return MetricsReport(
        iou=iou,
        vpq=result.vpq,
        sq=result.sq,
        rq=result.rq,
        per_frame=result.per_frame,
        runtime=runtime,
    )
