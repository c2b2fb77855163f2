"""
images.py
PNG rendering of image grids for human inspection.
"""
import io
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from storage.formats import atomic_write
from utils.errors import ShapeError

PNG_HASH_KEY = "config_hash"


def grid_to_array(grid: np.ndarray, pad: int = 1, max_value: Optional[float] = None) -> np.ndarray:
    """
    Tile a (rows, cols, H, W) grid into one uint8 image with `pad` pixel
    gutters. Values are scaled by max_value (default: the grid maximum, at
    least 1).
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 3:
        grid = grid[None]
    if grid.ndim != 4:
        raise ShapeError("grid_to_array", "ndim", 4, grid.ndim)
    rows, cols, h, w = grid.shape
    top = max_value if max_value is not None else max(float(grid.max(initial=0.0)), 1.0)
    canvas = np.full((rows * (h + pad) + pad, cols * (w + pad) + pad), 128, dtype=np.uint8)
    tiles = np.clip(np.round(grid / top * 255), 0, 255).astype(np.uint8)
    for r in range(rows):
        for c in range(cols):
            y, x = pad + r * (h + pad), pad + c * (w + pad)
            canvas[y:y + h, x:x + w] = tiles[r, c]
    return canvas


def to_image(grid: np.ndarray, scale: int = 4, pad: int = 1, max_value: Optional[float] = None) -> Image.Image:
    image = Image.fromarray(grid_to_array(grid, pad, max_value))
    if scale != 1:
        image = image.resize((image.width * scale, image.height * scale), Image.Resampling.NEAREST)
    return image


def save_grid(path: Union[str, Path], grid: np.ndarray, scale: int = 4, pad: int = 1,
              max_value: Optional[float] = None, config_hash: str = "") -> Path:
    """Write a grid as PNG; `config_hash` goes into a "config_hash" text chunk"""
    info = PngInfo()
    info.add_text(PNG_HASH_KEY, config_hash)
    buffer = io.BytesIO()
    to_image(grid, scale, pad, max_value).save(buffer, format="PNG", pnginfo=info)
    atomic_write(path, buffer.getvalue())
    return Path(path)


def png_config_hash(path: Union[str, Path]) -> str:
    """Config hash recorded in a PNG's text chunks ("" when there is none)"""
    with Image.open(path) as image:
        image.load()
        return image.text.get(PNG_HASH_KEY, "")
