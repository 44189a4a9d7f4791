"""Artifact directories: a ``manifest.json`` plus one BGRD file per frame and modality."""

import logging
from pathlib import Path
from typing import Sequence, Type, TypeVar, Union

from pydantic import BaseModel, ValidationError

from .exceptions import ArtifactError
from .grids import FlowGrid, InstanceGrid, SegGrid, read_grid, write_grid
from .labelgen import MODALITIES, LabelFrame, LabelSet, compute_centers
from .schemas import InstanceManifest, LabelManifest, PredictionManifest, StageTiming
from .sim import Predictions

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
TIMING = "timing.txt"

ManifestT = TypeVar("ManifestT", bound=BaseModel)
PathLike = Union[str, Path]

_EXPECTED_TYPES = {
    "seg": SegGrid,
    "centerness": SegGrid,
    "inst": InstanceGrid,
    "offset": FlowGrid,
    "fwd_flow": FlowGrid,
    "back_flow": FlowGrid,
}


def frame_path(directory: PathLike, index: int, modality: str) -> Path:
    return Path(directory) / f"frame_{index:03d}_{modality}.bgrd"


def _prepare(directory: PathLike) -> Path:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactError(f"{directory}: cannot create output directory: {e.strerror or e}") from e
    return directory


def write_manifest(directory: PathLike, manifest: BaseModel) -> None:
    path = Path(directory) / MANIFEST
    path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")


def read_manifest(directory: PathLike, model: Type[ManifestT]) -> ManifestT:
    path = Path(directory) / MANIFEST
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"{path}: cannot read manifest: {e.strerror or e}") from e
    try:
        return model.model_validate_json(text)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ArtifactError(f"{path}: field {location}: {first['msg']}") from e


def load_frame(directory: PathLike, index: int, modality: str, shape: tuple[int, int]):
    path = frame_path(directory, index, modality)
    grid = read_grid(path, expected_shape=shape)
    expected = _EXPECTED_TYPES.get(modality)
    if expected is not None and not isinstance(grid, expected):
        raise ArtifactError(f"{path}: holds a {type(grid).__name__}, expected {expected.__name__}")
    return grid


# --- Labels ---


def save_label_set(labels: LabelSet, directory: PathLike, scenario_seed: int = 0) -> Path:
    directory = _prepare(directory)
    for index, frame in enumerate(labels.frames):
        for modality in MODALITIES:
            write_grid(getattr(frame, modality), frame_path(directory, index, modality))
    write_manifest(
        directory,
        LabelManifest(
            frame_count=len(labels),
            grid=labels.grid,
            egos=tuple(frame.ego for frame in labels.frames),
            modalities=MODALITIES,
            label_config=labels.config,
            scenario_seed=scenario_seed,
        ),
    )
    logger.info("saved %d label frames to %s", len(labels), directory)
    return directory


def load_label_set(directory: PathLike) -> LabelSet:
    manifest = read_manifest(directory, LabelManifest)
    if len(manifest.egos) != manifest.frame_count:
        raise ArtifactError(f"{directory}: manifest lists {len(manifest.egos)} egos for {manifest.frame_count} frames")
    shape = manifest.grid.shape
    frames = []
    for index, ego in enumerate(manifest.egos):
        grids = {modality: load_frame(directory, index, modality, shape) for modality in MODALITIES}
        frames.append(LabelFrame(ego=ego, centers=compute_centers(grids["inst"]), **grids))
    return LabelSet(grid=manifest.grid, config=manifest.label_config, frames=tuple(frames))


# --- Predictions ---


def save_predictions(predictions: Predictions, manifest: PredictionManifest, directory: PathLike) -> Path:
    directory = _prepare(directory)
    for modality in Predictions.MODALITIES:
        for index, grid in enumerate(predictions.sequence(modality)):
            write_grid(grid, frame_path(directory, index, modality))
    write_manifest(directory, manifest)
    logger.info("saved %d predicted frames to %s", len(predictions), directory)
    return directory


def load_predictions(directory: PathLike) -> tuple[Predictions, PredictionManifest]:
    manifest = read_manifest(directory, PredictionManifest)
    shape = manifest.grid.shape
    columns = {
        modality: tuple(load_frame(directory, index, modality, shape) for index in range(manifest.frame_count))
        for modality in Predictions.MODALITIES
    }
    return Predictions(**columns), manifest


# --- Instances ---


def save_instances(
    instances: Sequence[InstanceGrid],
    manifest: InstanceManifest,
    directory: PathLike,
    timings: Sequence[StageTiming] = (),
) -> Path:
    """Instance frames are numbered from 0 (the first predicted frame)."""
    directory = _prepare(directory)
    for index, grid in enumerate(instances):
        write_grid(grid, frame_path(directory, index, "inst"))
    write_manifest(directory, manifest)
    if timings:
        (directory / TIMING).write_text("".join(timing.to_line() + "\n" for timing in timings), encoding="utf-8")
    logger.info("saved %d instance frames to %s", len(instances), directory)
    return directory


def load_instances(directory: PathLike) -> tuple[list[InstanceGrid], InstanceManifest]:
    manifest = read_manifest(directory, InstanceManifest)
    shape = manifest.grid.shape
    instances = [load_frame(directory, index, "inst", shape) for index in range(manifest.frame_count)]
    return instances, manifest


def load_grid_sequence(directory: PathLike, modality: str) -> list:
    """Every ``frame_XXX_<modality>.bgrd`` in index order, whatever kind of directory."""
    directory = Path(directory)
    paths = sorted(directory.glob(f"frame_*_{modality}.bgrd"))
    if not paths:
        raise ArtifactError(f"{directory}: no {modality} frames found")
    return [read_grid(path) for path in paths]
