"""2D rigid geometry and the BEV raster convention.

Ego frame: ``fx`` points forward along the anchor yaw, ``fy`` to the left.
Raster: row 0 is the farthest-forward edge and columns grow to the ego's
right, with integer coordinates at cell centres::

    row = H/2 - fx / resolution
    col = W/2 - fy / resolution

so the anchor itself sits exactly on cell (H/2, W/2).
"""

from typing import Optional

import numpy as np

from .exceptions import OutOfBoundsError
from .schemas import GridSpec, Pose2D


def _as_points(points) -> np.ndarray:
    array = np.asarray(points, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(1, 2)
    if array.ndim != 2 or array.shape[1] != 2:
        raise ValueError(f"points must have shape (N, 2), got {array.shape}")
    return array


def rigid_transform(points, from_pose: Pose2D, to_pose: Pose2D) -> np.ndarray:
    """Re-expresses points given in the ``from_pose`` frame in the ``to_pose`` frame."""
    local = _as_points(points)

    # from-frame -> world
    cos_a, sin_a = np.cos(from_pose.yaw), np.sin(from_pose.yaw)
    world_x = from_pose.x + cos_a * local[:, 0] - sin_a * local[:, 1]
    world_y = from_pose.y + sin_a * local[:, 0] + cos_a * local[:, 1]

    # world -> to-frame
    dx = world_x - to_pose.x
    dy = world_y - to_pose.y
    cos_b, sin_b = np.cos(to_pose.yaw), np.sin(to_pose.yaw)
    return np.stack([cos_b * dx + sin_b * dy, -sin_b * dx + cos_b * dy], axis=1)


def world_to_grid_array(points, spec: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised world -> (row, col) with an in-bounds mask."""
    world = _as_points(points)
    ego = rigid_transform(world, Pose2D(), spec.anchor)
    rows = spec.height_cells / 2.0 - ego[:, 0] / spec.resolution
    cols = spec.width_cells / 2.0 - ego[:, 1] / spec.resolution
    return rows, cols, in_bounds(rows, cols, spec)


def in_bounds(rows, cols, spec: GridSpec) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    return (
        (rows >= -0.5)
        & (rows < spec.height_cells - 0.5)
        & (cols >= -0.5)
        & (cols < spec.width_cells - 0.5)
    )


def world_to_grid(point, spec: GridSpec) -> Optional[tuple[float, float]]:
    """Returns fractional (row, col), or None when the point is outside the window."""
    rows, cols, inside = world_to_grid_array(point, spec)
    if not inside[0]:
        return None
    return float(rows[0]), float(cols[0])


def grid_to_world_array(rows, cols, spec: GridSpec) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64).ravel()
    cols = np.asarray(cols, dtype=np.float64).ravel()
    fx = (spec.height_cells / 2.0 - rows) * spec.resolution
    fy = (spec.width_cells / 2.0 - cols) * spec.resolution
    return rigid_transform(np.stack([fx, fy], axis=1), spec.anchor, Pose2D())


def grid_to_world(cell, spec: GridSpec) -> tuple[float, float]:
    row, col = float(cell[0]), float(cell[1])
    if not in_bounds(row, col, spec):
        raise OutOfBoundsError(
            f"cell ({row}, {col}) is outside the {spec.height_cells}x{spec.width_cells} grid"
        )
    world = grid_to_world_array(row, col, spec)
    return float(world[0, 0]), float(world[0, 1])


def cell_centers_world(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """World x and y of every cell centre, each shaped (H, W)."""
    rows, cols = np.indices(spec.shape, dtype=np.float64)
    world = grid_to_world_array(rows, cols, spec)
    return world[:, 0].reshape(spec.shape), world[:, 1].reshape(spec.shape)
