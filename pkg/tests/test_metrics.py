import numpy as np
import pytest

from bevwarp.exceptions import MetricsError
from bevwarp.grids import InstanceGrid, SegGrid
from bevwarp.metrics import evaluate, iou_seq, panoptic_match, vpq_seq
from bevwarp.schemas import StageTiming

from .conftest import blocks

SHAPE = (20, 20)


def _pair(a: int, b: int) -> InstanceGrid:
    return blocks(SHAPE, (a, 2, 6, 2, 6), (b, 10, 14, 10, 14))


def test_perfect_prediction():
    gt = [_pair(1, 2)] * 3
    result = vpq_seq([_pair(7, 9)] * 3, gt)
    assert (result.vpq, result.sq, result.rq) == (1.0, 1.0, 1.0)
    assert iou_seq([_pair(7, 9)] * 3, gt) == 1.0


def test_id_swap_halfway_halves_vpq():
    gt = [_pair(1, 2)] * 4
    pred = [_pair(1, 2), _pair(1, 2), _pair(2, 1), _pair(2, 1)]
    result = vpq_seq(pred, gt)
    assert result.vpq == pytest.approx(0.5)
    assert [frame.pq for frame in result.per_frame] == [1.0, 1.0, 0.0, 0.0]
    assert result.per_frame[2].fp_count == 2
    assert result.per_frame[2].fn_count == 2


def test_half_overlap_iou():
    gt = [blocks(SHAPE, (1, 0, 4, 0, 1))]
    pred = [blocks(SHAPE, (1, 2, 6, 0, 1))]
    assert iou_seq(pred, gt) == pytest.approx(2 / 6)
    pred = [blocks(SHAPE, (1, 0, 2, 0, 1))]
    assert iou_seq(pred, gt) == pytest.approx(0.5)


def test_empty_frames_score_one():
    empty = [InstanceGrid.zeros(SHAPE)] * 2
    assert iou_seq(empty, empty) == 1.0
    result = vpq_seq(empty, empty)
    assert (result.vpq, result.sq, result.rq) == (1.0, 1.0, 1.0)


def test_missed_instance():
    gt = [_pair(1, 2)]
    pred = [blocks(SHAPE, (1, 2, 6, 2, 6))]
    result = vpq_seq(pred, gt)
    assert result.vpq == pytest.approx(1 / 1.5)
    assert result.rq == pytest.approx(1 / 1.5)
    assert result.sq == 1.0


def test_iou_accepts_probability_maps():
    gt = [SegGrid(np.array([[0.9, 0.2], [0.6, 0.0]]))]
    pred = [SegGrid(np.array([[0.5, 0.7], [0.1, 0.0]]))]
    assert iou_seq(pred, gt) == pytest.approx(1 / 3)


def test_match_requires_iou_above_half():
    gt = blocks(SHAPE, (1, 0, 4, 0, 1))
    pred = blocks(SHAPE, (5, 0, 2, 0, 1))  # iou exactly 0.5
    match = panoptic_match(pred, gt)
    assert match.tp == []
    assert match.fp == [5]
    assert match.fn == [1]


def test_vpq_is_invariant_to_relabeling():
    rng = np.random.default_rng(5)
    gt = [_pair(1, 2), blocks(SHAPE, (1, 3, 7, 2, 6), (2, 10, 14, 11, 15))]
    pred = [
        blocks(SHAPE, (4, 2, 6, 2, 5), (6, 10, 14, 10, 14), (8, 17, 19, 0, 3)),
        blocks(SHAPE, (4, 3, 7, 2, 6), (6, 11, 14, 11, 15)),
    ]
    baseline = vpq_seq(pred, gt).vpq
    for _ in range(5):
        new_ids = rng.permutation(np.arange(1, 20))
        relabel = np.concatenate([[0], new_ids])
        shuffled = [InstanceGrid(relabel[frame.ids]) for frame in pred]
        assert vpq_seq(shuffled, gt).vpq == pytest.approx(baseline)


def test_false_positive_never_raises_vpq():
    gt = [_pair(1, 2)] * 2
    pred = [blocks(SHAPE, (1, 2, 6, 2, 5), (2, 10, 14, 10, 14))] * 2
    with_fp = [blocks(SHAPE, (1, 2, 6, 2, 5), (2, 10, 14, 10, 14), (3, 17, 19, 17, 19))] * 2
    assert vpq_seq(with_fp, gt).vpq <= vpq_seq(pred, gt).vpq


def test_evaluate_report():
    gt = [_pair(1, 2)] * 2
    timings = [StageTiming(stage="warp", frame=1, microseconds=12)]
    report = evaluate(gt, gt, runtime=timings)
    assert report.iou == 1.0
    assert report.vpq == 1.0
    assert len(report.per_frame) == 2
    assert report.runtime == timings
    assert report.to_lines()[0].startswith("iou=")


def test_mismatched_sequences_are_rejected():
    with pytest.raises(MetricsError):
        vpq_seq([_pair(1, 2)], [_pair(1, 2)] * 2)
    with pytest.raises(MetricsError):
        iou_seq([], [])
    with pytest.raises(MetricsError):
        vpq_seq([InstanceGrid.zeros((4, 4))], [InstanceGrid.zeros((5, 5))])


def _frame_pq(pred: InstanceGrid, gt: InstanceGrid) -> float:
    match = panoptic_match(pred, gt)
    denominator = len(match.tp) + 0.5 * len(match.fp) + 0.5 * len(match.fn)
    if denominator == 0:
        return 1.0
    return sum(iou for _, _, iou in match.tp) / denominator


def test_id_consistency_never_raises_quality_above_framewise_pq():
    rng = np.random.default_rng(3)
    slots = [(2, 6, 2, 6), (2, 6, 10, 14), (10, 14, 2, 6), (10, 14, 10, 14)]
    for _ in range(40):
        gt, pred = [], []
        for _ in range(5):
            ids = rng.permutation(4) + 1
            keep = rng.random(4) > 0.2
            gt.append(blocks(SHAPE, *[(i + 1, *slot) for i, slot in enumerate(slots)]))
            pred.append(blocks(SHAPE, *[(int(ids[i]), *slot) for i, slot in enumerate(slots) if keep[i]]))
        framewise = np.mean([_frame_pq(p, g) for p, g in zip(pred, gt)])
        assert vpq_seq(pred, gt).vpq <= framewise + 1e-12
