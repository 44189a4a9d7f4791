import hashlib

import numpy as np
import pytest
from click.testing import CliRunner
from pydantic import ValidationError

from bevwarp.experiment import (
    MODES,
    TABLE_HEADER,
    format_curves,
    format_table,
    noise_for_sigma,
    run_matrix,
    run_trial,
    trial_noise,
)
from bevwarp.main import cli
from bevwarp.schemas import ExperimentConfig, NoiseConfig

NOISY = NoiseConfig(flow_sigma=1.0, boundary_flip_prob=0.05, seed=7)


@pytest.mark.parametrize("seed", range(10))
def test_clean_predictions_are_recovered_exactly(seed):
    reports = run_trial(seed, preset="long", t_in=3, t_out=4, num_agents=10)
    for mode in MODES:
        assert reports[mode].vpq == pytest.approx(1.0, abs=1e-9), mode
        assert reports[mode].iou == pytest.approx(1.0, abs=1e-9), mode


def test_trial_noise_depends_on_both_seeds():
    base = NoiseConfig(flow_sigma=1.0, seed=3)
    assert trial_noise(base, 0) == trial_noise(base, 0)
    assert trial_noise(base, 0).seed != trial_noise(base, 1).seed
    assert trial_noise(base, 0).seed != trial_noise(base.model_copy(update={"seed": 4}), 0).seed
    assert trial_noise(base, 0).flow_sigma == 1.0


def test_zero_sigma_cell_is_noise_free():
    assert noise_for_sigma(NOISY, 0.0).is_zero
    assert noise_for_sigma(NOISY, 0.5).flow_sigma == 0.5
    assert noise_for_sigma(NOISY, 0.5).boundary_flip_prob == 0.05


def test_matrix_rows_and_formatting():
    config = ExperimentConfig(t_in=2, num_agents=4, noise=NOISY, seeds=(0, 1))
    rows = run_matrix(config, horizons=[4], sigmas=[0.0, 1.0])
    assert [(row.horizon, row.flow_sigma, row.mode) for row in rows] == [
        (4, 0.0, "warp"),
        (4, 0.0, "hm"),
        (4, 1.0, "warp"),
        (4, 1.0, "hm"),
    ]
    assert all(len(row.curve) == 4 for row in rows)
    assert rows[0].vpq_mean == pytest.approx(1.0)
    assert rows[0].vpq_std == pytest.approx(0.0)
    table = format_table(rows)
    assert table.splitlines()[0] == TABLE_HEADER
    assert len(table.splitlines()) == 5
    assert format_curves(rows).splitlines()[1].startswith("horizon=4 flow_sigma=0.00 mode=hm pq=")
    assert set(rows[1].stage_us) == {"centers", "cluster", "match"}


def test_matrix_defaults_to_the_configured_horizons():
    config = ExperimentConfig(t_in=2, num_agents=3, horizons=(4,), seeds=(0,))
    rows = run_matrix(config, sigmas=[0.0])
    assert [(row.horizon, row.mode) for row in rows] == [(4, "warp"), (4, "hm")]


def test_only_two_and_eight_second_horizons_are_accepted():
    assert ExperimentConfig().horizons == (4, 16)
    with pytest.raises(ValidationError):
        ExperimentConfig(horizons=(8,))
    with pytest.raises(ValidationError):
        ExperimentConfig(horizons=())


def _mean_vpq(t_out: int, seeds) -> dict[str, float]:
    totals = {mode: [] for mode in MODES}
    for seed in seeds:
        for mode, report in run_trial(seed, t_out=t_out, noise=NOISY).items():
            totals[mode].append(report.vpq)
    return {mode: float(np.mean(values)) for mode, values in totals.items()}


@pytest.mark.slow
def test_warp_beats_hm_at_short_horizon():
    vpq = _mean_vpq(4, range(20))
    assert vpq["warp"] >= vpq["hm"]


@pytest.mark.slow
def test_gap_grows_with_the_horizon():
    config = ExperimentConfig(noise=NOISY, seeds=tuple(range(20)))
    rows = {(row.horizon, row.mode): row for row in run_matrix(config, horizons=[4, 16], sigmas=[1.0])}
    short_gap = rows[4, "warp"].vpq_mean - rows[4, "hm"].vpq_mean
    long_gap = rows[16, "warp"].vpq_mean - rows[16, "hm"].vpq_mean
    assert long_gap > short_gap

    frames = np.arange(16)
    warp_slope = np.polyfit(frames, rows[16, "warp"].curve, 1)[0]
    hm_slope = np.polyfit(frames, rows[16, "hm"].curve, 1)[0]
    assert warp_slope > hm_slope


@pytest.mark.slow
def test_warp_post_processing_is_faster():
    config = ExperimentConfig(num_agents=20, noise=NOISY, seeds=tuple(range(5)))
    rows = {row.mode: row for row in run_matrix(config, horizons=[16], sigmas=[1.0])}
    assert rows["warp"].total_us < rows["hm"].total_us


@pytest.mark.slow
def test_bench_files_are_reproducible(tmp_path):
    runner = CliRunner()
    digests = []
    for run in ("a", "b"):
        out = tmp_path / run
        result = runner.invoke(
            cli,
            ["bench", "--tout", "4", "--flow-sigma", "0", "--flow-sigma", "1", "--seeds", "2", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        digests.append(
            [hashlib.sha256((out / name).read_bytes()).hexdigest() for name in ("bench_table.txt", "bench_curves.txt")]
        )
    assert digests[0] == digests[1]
