"""Per-frame BEV rasters and the BGRD binary container.

BGRD layout (little-endian)::

    magic     4 bytes  b"BGRD"
    version   u8       1
    dtype     u8       0 = f32, 1 = u32
    height    u32
    width     u32
    channels  u32
    payload   channels x H x W values, row-major, channel-major

SegGrid is f32 x 1 channel, InstanceGrid u32 x 1, FlowGrid f32 x 2 (dy, dx).
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .exceptions import ArtifactError, GridFormatError

logger = logging.getLogger(__name__)

MAGIC = b"BGRD"
VERSION = 1
DTYPE_F32 = 0
DTYPE_U32 = 1
_HEADER = struct.Struct("<4sBBIII")
_MAX_ID = 2**32 - 1


def _frozen_array(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class SegGrid:
    """Probability map in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise ValueError(f"SegGrid needs a 2D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("SegGrid values must be finite")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("SegGrid values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen_array(values))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def binarize(self, threshold: float = 0.5) -> np.ndarray:
        return self.values >= threshold

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "SegGrid":
        return cls(np.zeros(shape, dtype=np.float32))

    def __eq__(self, other) -> bool:
        return isinstance(other, SegGrid) and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class InstanceGrid:
    """Integer instance IDs, 0 = background."""

    ids: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.ids)
        if raw.ndim != 2:
            raise ValueError(f"InstanceGrid needs a 2D array, got shape {raw.shape}")
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
                raise ValueError("InstanceGrid IDs must be integers")
        ids = raw.astype(np.int64)
        if ids.size and (ids.min() < 0 or ids.max() > _MAX_ID):
            raise ValueError("InstanceGrid IDs must be in [0, 2^32-1]")
        object.__setattr__(self, "ids", _frozen_array(ids))

    @property
    def shape(self) -> tuple[int, int]:
        return self.ids.shape

    @property
    def foreground(self) -> np.ndarray:
        return self.ids != 0

    def instance_ids(self) -> np.ndarray:
        """Sorted distinct non-zero IDs."""
        unique = np.unique(self.ids)
        return unique[unique != 0]

    def to_seg(self) -> SegGrid:
        return SegGrid(self.foreground.astype(np.float32))

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "InstanceGrid":
        return cls(np.zeros(shape, dtype=np.int64))

    def __eq__(self, other) -> bool:
        return isinstance(other, InstanceGrid) and np.array_equal(self.ids, other.ids)


@dataclass(frozen=True, eq=False)
class FlowGrid:
    """Two-channel displacement field in cell units (dy along rows, dx along cols)."""

    dy: np.ndarray
    dx: np.ndarray

    def __post_init__(self):
        dy = np.array(self.dy, dtype=np.float32)
        dx = np.array(self.dx, dtype=np.float32)
        if dy.ndim != 2 or dy.shape != dx.shape:
            raise ValueError(f"FlowGrid channels must be equal 2D arrays, got {dy.shape} and {dx.shape}")
        if not (np.all(np.isfinite(dy)) and np.all(np.isfinite(dx))):
            raise ValueError("FlowGrid values must be finite")
        object.__setattr__(self, "dy", _frozen_array(dy))
        object.__setattr__(self, "dx", _frozen_array(dx))

    @property
    def shape(self) -> tuple[int, int]:
        return self.dy.shape

    def stacked(self) -> np.ndarray:
        """(2, H, W) float64 view used by the warping maths."""
        return np.stack([self.dy, self.dx]).astype(np.float64)

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.dy.astype(np.float64), self.dx.astype(np.float64))

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "FlowGrid":
        return cls(np.zeros(shape, dtype=np.float32), np.zeros(shape, dtype=np.float32))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FlowGrid)
            and np.array_equal(self.dy, other.dy)
            and np.array_equal(self.dx, other.dx)
        )


Grid = Union[SegGrid, InstanceGrid, FlowGrid]


def encode_grid(grid: Grid) -> bytes:
    if isinstance(grid, SegGrid):
        dtype_code, payload = DTYPE_F32, grid.values[np.newaxis].astype("<f4")
    elif isinstance(grid, InstanceGrid):
        dtype_code, payload = DTYPE_U32, grid.ids[np.newaxis].astype("<u4")
    elif isinstance(grid, FlowGrid):
        dtype_code, payload = DTYPE_F32, np.stack([grid.dy, grid.dx]).astype("<f4")
    else:
        raise TypeError(f"cannot encode {type(grid).__name__}")

    channels, height, width = payload.shape
    header = _HEADER.pack(MAGIC, VERSION, dtype_code, height, width, channels)
    return header + payload.tobytes(order="C")


def decode_grid(data: bytes, expected_shape: tuple[int, int] | None = None, source: str = "<bytes>") -> Grid:
    if len(data) < _HEADER.size:
        raise GridFormatError(f"{source}: truncated header ({len(data)} bytes)")
    magic, version, dtype_code, height, width, channels = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise GridFormatError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise GridFormatError(f"{source}: unsupported version {version}")
    if dtype_code not in (DTYPE_F32, DTYPE_U32):
        raise GridFormatError(f"{source}: unknown dtype code {dtype_code}")
    if expected_shape is not None and (height, width) != tuple(expected_shape):
        raise GridFormatError(
            f"{source}: dimension mismatch, file is {height}x{width}, expected "
            f"{expected_shape[0]}x{expected_shape[1]}"
        )

    expected_bytes = height * width * channels * 4
    payload = data[_HEADER.size :]
    if len(payload) != expected_bytes:
        raise GridFormatError(
            f"{source}: dimension mismatch, header announces {channels}x{height}x{width} "
            f"({expected_bytes} bytes) but payload has {len(payload)} bytes"
        )

    dtype = "<f4" if dtype_code == DTYPE_F32 else "<u4"
    array = np.frombuffer(payload, dtype=dtype).reshape(channels, height, width)

    try:
        if dtype_code == DTYPE_U32 and channels == 1:
            return InstanceGrid(array[0].astype(np.int64))
        if dtype_code == DTYPE_F32 and channels == 1:
            if np.isnan(array).any():
                raise GridFormatError(f"{source}: NaN in segmentation payload")
            return SegGrid(array[0])
        if dtype_code == DTYPE_F32 and channels == 2:
            return FlowGrid(array[0], array[1])
    except ValueError as e:
        if isinstance(e, GridFormatError):
            raise
        raise GridFormatError(f"{source}: invalid payload: {e}") from e
    raise GridFormatError(f"{source}: no grid type with dtype {dtype_code} and {channels} channels")


def write_grid(grid: Grid, path: Union[str, Path]) -> None:
    path = Path(path)
    path.write_bytes(encode_grid(grid))
    logger.debug("wrote %s (%s)", path, type(grid).__name__)


def read_grid(path: Union[str, Path], expected_shape: tuple[int, int] | None = None) -> Grid:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ArtifactError(f"{path}: cannot read grid: {e.strerror or e}") from e
    return decode_grid(data, expected_shape=expected_shape, source=str(path))
