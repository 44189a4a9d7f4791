"""End-to-end trials and the warp-vs-HM comparison matrix."""

import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel

from .assoc import PipelineResult, run_pipeline
from .labelgen import LabelSet, generate_labels
from .metrics import evaluate
from .schemas import (
    AssocConfig,
    ExperimentConfig,
    LabelConfig,
    MetricsReport,
    NoiseConfig,
    Preset,
    PRESETS,
    ScenarioConfig,
)
from .sim import Predictions, perturb, simulate

logger = logging.getLogger(__name__)

MODES = ("warp", "hm")


def trial_noise(noise: NoiseConfig, seed: int) -> NoiseConfig:
    """Noise stream of one trial, derived from both the noise seed and the scenario seed."""
    state = np.random.SeedSequence([noise.seed, seed]).generate_state(1, dtype=np.uint64)
    return noise.model_copy(update={"seed": int(state[0])})


def run_modes(
    predictions: Predictions,
    t_in: int,
    t_out: int,
    assoc: AssocConfig,
    modes: Sequence[str] = MODES,
) -> dict[str, PipelineResult]:
    """Runs each pipeline on predicted frames t_in..t_in+t_out-1."""
    window = slice(t_in, t_in + t_out)
    seg = list(predictions.seg[window])
    results = {}
    for mode in modes:
        cfg = assoc.model_copy(update={"mode": mode})
        if mode == "warp":
            results[mode] = run_pipeline(
                seg, list(predictions.back_flow[window]), cfg, seg_prev=predictions.seg[t_in - 1]
            )
        else:
            results[mode] = run_pipeline(
                seg,
                list(predictions.fwd_flow[window]),
                cfg,
                centerness=list(predictions.centerness[window]),
                offset=list(predictions.offset[window]),
            )
    return results


def ground_truth_window(labels: LabelSet, t_in: int, t_out: int):
    return [frame.inst for frame in labels.frames[t_in : t_in + t_out]]


def run_trial(
    seed: int,
    preset: Preset = "long",
    t_in: int = 3,
    t_out: int = 4,
    noise: Optional[NoiseConfig] = None,
    num_agents: int = 10,
    assoc: Optional[AssocConfig] = None,
    label_config: Optional[LabelConfig] = None,
) -> dict[str, MetricsReport]:
    """Simulate, label, perturb, associate with both pipelines and score them."""
    noise = noise or NoiseConfig()
    assoc = assoc or AssocConfig.for_preset(preset)
    scenario = simulate(ScenarioConfig(num_agents=num_agents, num_frames=t_in + t_out, seed=seed))
    labels = generate_labels(scenario, PRESETS[preset], label_config)
    predictions = perturb(labels, trial_noise(noise, seed))
    gt = ground_truth_window(labels, t_in, t_out)
    reports = {
        mode: evaluate(result.instances, gt, runtime=result.timings)
        for mode, result in run_modes(predictions, t_in, t_out, assoc).items()
    }
    logger.debug(
        "trial seed=%d t_out=%d: %s",
        seed,
        t_out,
        " ".join(f"{mode}_vpq={report.vpq:.4f}" for mode, report in reports.items()),
    )
    return reports


# --- Comparison matrix ---


class BenchRow(BaseModel):
    horizon: int
    flow_sigma: float
    mode: str
    vpq_mean: float
    vpq_std: float
    iou_mean: float
    iou_std: float
    curve: list[float]  # per-frame PQ averaged over seeds
    stage_us: dict[str, float]  # mean microseconds per stage call
    total_us: float  # mean post-processing time per trial

    def table_line(self) -> str:
        return (
            f"{self.horizon:<8d}{self.flow_sigma:<12.2f}{self.mode:<6s}"
            f"{self.vpq_mean:<10.4f}{self.vpq_std:<10.4f}{self.iou_mean:<10.4f}{self.iou_std:.4f}"
        )

    def curve_line(self) -> str:
        values = ",".join(f"{value:.4f}" for value in self.curve)
        return f"horizon={self.horizon} flow_sigma={self.flow_sigma:.2f} mode={self.mode} pq={values}"

    def runtime_lines(self) -> list[str]:
        prefix = f"horizon={self.horizon} flow_sigma={self.flow_sigma:.2f} mode={self.mode}"
        lines = [f"{prefix} stage={stage} mean_us={us:.1f}" for stage, us in sorted(self.stage_us.items())]
        lines.append(f"{prefix} total_us={self.total_us:.1f}")
        return lines


TABLE_HEADER = f"{'horizon':<8s}{'flow_sigma':<12s}{'mode':<6s}{'vpq_mean':<10s}{'vpq_std':<10s}{'iou_mean':<10s}iou_std"


def noise_for_sigma(base: NoiseConfig, sigma: float) -> NoiseConfig:
    if sigma == 0:
        return NoiseConfig(seed=base.seed)
    return base.model_copy(update={"flow_sigma": sigma})


def _trial_task(task) -> dict[str, MetricsReport]:
    seed, preset, t_in, t_out, noise, num_agents, assoc = task
    return run_trial(seed, preset, t_in, t_out, noise, num_agents, assoc)


def _summarize(horizon: int, sigma: float, mode: str, reports: list[MetricsReport]) -> BenchRow:
    vpq = np.array([report.vpq for report in reports])
    iou = np.array([report.iou for report in reports])
    curve = np.mean([[frame.pq for frame in report.per_frame] for report in reports], axis=0)
    stage_us: dict[str, list[int]] = defaultdict(list)
    totals = []
    for report in reports:
        timings = report.runtime or []
        for timing in timings:
            stage_us[timing.stage].append(timing.microseconds)
        totals.append(sum(timing.microseconds for timing in timings))
    return BenchRow(
        horizon=horizon,
        flow_sigma=sigma,
        mode=mode,
        vpq_mean=float(vpq.mean()),
        vpq_std=float(vpq.std()),
        iou_mean=float(iou.mean()),
        iou_std=float(iou.std()),
        curve=[float(value) for value in curve],
        stage_us={stage: float(np.mean(values)) for stage, values in stage_us.items()},
        total_us=float(np.mean(totals)),
    )


def run_matrix(
    config: ExperimentConfig,
    horizons: Optional[Sequence[int]] = None,
    sigmas: Sequence[float] = (1.0,),
    workers: int = 1,
) -> list[BenchRow]:
    """Every (horizon, sigma) cell over all seeds, one row per cell and mode.

    Horizons default to the ones named by the config.
    """
    horizons = config.horizons if horizons is None else horizons
    cells = [(horizon, sigma) for horizon in horizons for sigma in sigmas]
    tasks = [
        (
            seed,
            config.preset,
            config.t_in,
            horizon,
            noise_for_sigma(config.noise, sigma),
            config.num_agents,
            config.assoc_config,
        )
        for horizon, sigma in cells
        for seed in config.seeds
    ]
    logger.info("running %d trials on %d worker(s)", len(tasks), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_task, tasks))
    else:
        results = [_trial_task(task) for task in tasks]

    rows = []
    per_cell = len(config.seeds)
    for index, (horizon, sigma) in enumerate(cells):
        chunk = results[index * per_cell : (index + 1) * per_cell]
        for mode in MODES:
            rows.append(_summarize(horizon, sigma, mode, [result[mode] for result in chunk]))
    return rows


def format_table(rows: Sequence[BenchRow]) -> str:
    return "\n".join([TABLE_HEADER] + [row.table_line() for row in rows]) + "\n"


def format_curves(rows: Sequence[BenchRow]) -> str:
    return "\n".join(row.curve_line() for row in rows) + "\n"


def format_runtime(rows: Sequence[BenchRow]) -> str:
    return "\n".join(line for row in rows for line in row.runtime_lines()) + "\n"
