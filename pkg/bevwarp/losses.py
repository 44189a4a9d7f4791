"""Forward evaluation of the training objective.

Segmentation uses top-k cross-entropy, flow uses smooth-l1, and the two are
combined with a future discount either under fixed weights or under
homoscedastic uncertainty weighting with caller-supplied log-variances.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import LossError
from .grids import FlowGrid, SegGrid
from .schemas import FixedWeighting, LossConfig

logger = logging.getLogger(__name__)


def topk_ce(pred_prob: SegGrid, gt: SegGrid, k_fraction: float, eps: float = 1e-6) -> float:
    """Mean of the ``ceil(k * H * W)`` largest per-cell binary cross-entropies."""
    if not 0 < k_fraction <= 1:
        raise LossError(f"k_fraction must be in (0, 1], got {k_fraction}")
    if pred_prob.shape != gt.shape:
        raise LossError(f"shape mismatch: {pred_prob.shape} vs {gt.shape}")
    p = np.clip(pred_prob.values.astype(np.float64), eps, 1.0 - eps)
    target = gt.values.astype(np.float64) >= 0.5
    ce = np.where(target, -np.log(p), -np.log1p(-p)).ravel()
    k = max(1, math.ceil(k_fraction * ce.size))
    if k >= ce.size:
        return float(ce.mean())
    return float(np.partition(ce, ce.size - k)[ce.size - k :].mean())


def smooth_l1(pred: FlowGrid, gt: FlowGrid, beta: float = 1.0) -> float:
    if pred.shape != gt.shape:
        raise LossError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    residual = np.abs(pred.stacked() - gt.stacked())
    loss = np.where(residual < beta, 0.5 * residual**2 / beta, residual - 0.5 * beta)
    return float(loss.mean())


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    lambda_seg: float
    lambda_flow: float
    seg_term: float  # discounted mean of the segmentation losses
    flow_term: float

    def to_lines(self) -> list[str]:
        return [
            f"loss_total={self.total:.6f}",
            f"loss_seg={self.seg_term:.6f}",
            f"loss_flow={self.flow_term:.6f}",
            f"lambda_seg={self.lambda_seg:.6f}",
            f"lambda_flow={self.lambda_flow:.6f}",
        ]


def _discounted_mean(values: Sequence[float], gamma: float) -> float:
    return sum(gamma**t * value for t, value in enumerate(values)) / len(values)


def total_loss(seg_losses: Sequence[float], flow_losses: Sequence[float], cfg: LossConfig) -> LossBreakdown:
    if len(seg_losses) != len(flow_losses):
        raise LossError(f"{len(seg_losses)} segmentation losses vs {len(flow_losses)} flow losses")
    if not seg_losses:
        raise LossError("no per-frame losses given")
    seg_term = _discounted_mean(seg_losses, cfg.gamma)
    flow_term = _discounted_mean(flow_losses, cfg.gamma)

    weighting = cfg.weighting
    if isinstance(weighting, FixedWeighting):
        lambda_seg, lambda_flow = weighting.lambda_seg, weighting.lambda_flow
        total = lambda_seg * seg_term + lambda_flow * flow_term
    else:
        lambda_seg, lambda_flow = math.exp(-weighting.s_seg), math.exp(-weighting.s_flow)
        total = lambda_seg * seg_term + weighting.s_seg + lambda_flow * flow_term + weighting.s_flow
    return LossBreakdown(
        total=total, lambda_seg=lambda_seg, lambda_flow=lambda_flow, seg_term=seg_term, flow_term=flow_term
    )


def evaluate_losses(predictions, labels, cfg: LossConfig, first_frame: int, t_out: int) -> LossBreakdown:
    """Scores predicted segmentation and backward flow against the labels."""
    frames = range(first_frame, first_frame + t_out)
    if first_frame < 0 or frames.stop > min(len(predictions), len(labels)):
        raise LossError(
            f"frames {first_frame}..{frames.stop - 1} not covered by "
            f"{len(predictions)} predicted and {len(labels)} label frames"
        )
    seg_losses = [
        topk_ce(predictions.seg[t], labels.frames[t].seg, cfg.top_k_fraction, cfg.ce_eps) for t in frames
    ]
    flow_losses = [smooth_l1(predictions.back_flow[t], labels.frames[t].back_flow) for t in frames]
    breakdown = total_loss(seg_losses, flow_losses, cfg)
    logger.debug("losses over %d frames: %s", t_out, breakdown)
    return breakdown
