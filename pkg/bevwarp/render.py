import logging
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image, ImageColor

from .grids import FlowGrid, InstanceGrid, SegGrid

logger = logging.getLogger(__name__)

PALETTE_SIZE = 64

# Fixed colours, hue stepped by a coprime of 360 so neighbours differ; never black
PALETTE = np.array(
    [
        ImageColor.getrgb(f"hsv({(i * 137) % 360},{70 + (i % 3) * 10}%,{95 - (i % 4) * 10}%)")
        for i in range(PALETTE_SIZE)
    ],
    dtype=np.uint8,
)


def color_for(instance_id: int) -> tuple[int, int, int]:
    if instance_id == 0:
        return (0, 0, 0)
    return tuple(int(v) for v in PALETTE[instance_id % PALETTE_SIZE])


def to_image(grid: Union[InstanceGrid, SegGrid]) -> Image.Image:
    if isinstance(grid, InstanceGrid):
        rgb = np.zeros(grid.shape + (3,), dtype=np.uint8)
        fg = grid.foreground
        rgb[fg] = PALETTE[grid.ids[fg] % PALETTE_SIZE]
        return Image.fromarray(rgb)
    if isinstance(grid, SegGrid):
        grey = np.rint(grid.values.astype(np.float64) * 255.0).astype(np.uint8)
        return Image.fromarray(grey).convert("RGB")
    if isinstance(grid, FlowGrid):
        raise TypeError("flow grids have no image rendering")
    raise TypeError(f"cannot render {type(grid).__name__}")


def render_frames(grids: Sequence[Union[InstanceGrid, SegGrid]], out_dir: Union[str, Path]) -> list[Path]:
    """Writes ``frame_XXX.ppm`` for every grid."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, grid in enumerate(grids):
        path = out_dir / f"frame_{index:03d}.ppm"
        to_image(grid).save(path, format="PPM")
        paths.append(path)
    logger.info("rendered %d frames to %s", len(paths), out_dir)
    return paths
