import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from bevwarp.grids import InstanceGrid, write_grid
from bevwarp.main import cli
from bevwarp.storage import MANIFEST, TIMING, load_instances


@pytest.fixture
def runner():
    return CliRunner()


def _invoke(runner, *args):
    result = runner.invoke(cli, [str(arg) for arg in args], catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


@pytest.fixture
def pipeline(runner, tmp_path):
    """scenario -> labels -> predictions, clean, on the long preset."""
    _invoke(runner, "simulate", "--agents", 6, "--tin", 3, "--tout", 4, "--seed", 11, "--out", tmp_path / "scn")
    _invoke(runner, "labels", tmp_path / "scn" / "scenario.jsonl", "--out", tmp_path / "labels")
    _invoke(runner, "predict", tmp_path / "labels", "--out", tmp_path / "pred")
    return tmp_path


def test_simulate_reports_what_it_wrote(runner, tmp_path):
    result = _invoke(runner, "simulate", "--agents", 4, "--frames", 5, "--out", tmp_path)
    assert result.output.startswith("frames=5 agents=4 out=")
    assert (tmp_path / "scenario.jsonl").read_text().count("\n") == 6


def test_artifact_layout(pipeline):
    labels = pipeline / "labels"
    assert (labels / MANIFEST).exists()
    for modality in ("seg", "inst", "centerness", "offset", "fwd_flow", "back_flow"):
        assert len(list(labels.glob(f"frame_*_{modality}.bgrd"))) == 7
    assert len(list((pipeline / "pred").glob("frame_*_seg.bgrd"))) == 7


@pytest.mark.parametrize("mode", ["warp", "hm"])
def test_clean_pipeline_scores_perfectly(runner, pipeline, mode):
    result = _invoke(runner, "associate", pipeline / "pred", "--mode", mode, "--tin", 3, "--out", pipeline / mode)
    assert result.output.splitlines()[-1].startswith(f"mode={mode} frames=4")
    assert (pipeline / mode / TIMING).exists()
    instances, manifest = load_instances(pipeline / mode)
    assert (manifest.first_frame, manifest.frame_count, manifest.mode) == (3, 4, mode)

    result = _invoke(runner, "eval", pipeline / mode, pipeline / "labels")
    lines = result.output.splitlines()
    assert lines[0] == "iou=1.0000"
    assert lines[1] == "vpq=1.0000"


def test_eval_with_losses(runner, pipeline):
    _invoke(runner, "associate", pipeline / "pred", "--out", pipeline / "inst")
    result = _invoke(
        runner,
        "eval",
        pipeline / "inst",
        pipeline / "labels",
        "--losses",
        "--pred-dir",
        pipeline / "pred",
        "--weighting",
        "uncertainty",
        "--s-seg",
        0.5,
    )
    assert "loss_flow=0.000000" in result.output
    assert "lambda_seg=0.606531" in result.output


def test_outputs_are_byte_identical_across_runs(runner, tmp_path):
    for run in ("a", "b"):
        base = tmp_path / run
        _invoke(runner, "simulate", "--agents", 5, "--tin", 2, "--tout", 3, "--seed", 4, "--out", base / "scn")
        _invoke(runner, "labels", base / "scn" / "scenario.jsonl", "--preset", "short", "--out", base / "labels")
        _invoke(runner, "predict", base / "labels", "--flow-sigma", 1.0, "--boundary-flip", 0.05, "--seed", 9, "--out", base / "pred")
        _invoke(runner, "associate", base / "pred", "--tin", 2, "--out", base / "inst")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for name in files:
        if name.name == TIMING:
            continue
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_render_instances(runner, pipeline):
    _invoke(runner, "associate", pipeline / "pred", "--out", pipeline / "inst")
    result = _invoke(runner, "render", pipeline / "inst", "--out", pipeline / "img")
    assert result.output.startswith("frames=4")
    image = Image.open(pipeline / "img" / "frame_000.ppm")
    assert image.size == (200, 200)
    assert image.mode == "RGB"


def test_empty_grid_renders_black(runner, tmp_path):
    (tmp_path / "grids").mkdir()
    write_grid(InstanceGrid.zeros((12, 8)), tmp_path / "grids" / "frame_000_inst.bgrd")
    _invoke(runner, "render", tmp_path / "grids", "--out", tmp_path / "img")
    pixels = np.asarray(Image.open(tmp_path / "img" / "frame_000.ppm"))
    assert pixels.shape == (12, 8, 3)
    assert not pixels.any()


def test_missing_scenario_file_fails(runner, tmp_path):
    result = runner.invoke(cli, ["labels", str(tmp_path / "nope.jsonl")])
    assert result.exit_code != 0


def test_malformed_scenario_reports_line(runner, tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"format": "something-else"}\n')
    result = runner.invoke(cli, ["labels", str(path), "--out", str(tmp_path / "labels")])
    assert result.exit_code == 1
    assert "bad.jsonl:1:" in result.output


def test_horizon_longer_than_predictions_fails(runner, pipeline):
    result = runner.invoke(cli, ["associate", str(pipeline / "pred"), "--tin", "3", "--tout", "9"])
    assert result.exit_code == 1
    assert "associate failed" in result.output


def test_directory_without_manifest_fails(runner, tmp_path):
    (tmp_path / "empty").mkdir()
    result = runner.invoke(cli, ["predict", str(tmp_path / "empty"), "--out", str(tmp_path / "pred")])
    assert result.exit_code == 1
    assert "manifest" in result.output
