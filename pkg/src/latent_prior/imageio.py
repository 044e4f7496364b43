"""PNG input/output for (C, H, W) float rasters in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(image: np.ndarray) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 3:
        x = np.moveaxis(x, 0, -1)
        if x.shape[-1] == 1:
            x = x[..., 0]
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format="PNG")
    return path


def _open(path) -> Image.Image:
    try:
        return Image.open(path)
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc


def image_size(path) -> tuple[int, int]:
    """(height, width) of an image file."""
    with _open(path) as im:
        return im.height, im.width


def load_rgb(path, size: int | None = None) -> np.ndarray:
    """Load as (3, H, W) float64; ``size`` resizes to a square of that side."""
    with _open(path) as im:
        im = im.convert("RGB")
        if size:
            im = im.resize((size, size), Image.Resampling.BICUBIC)
        return np.moveaxis(np.asarray(im, dtype=np.float64) / 255.0, -1, 0).copy()


def load_mask(path, size: int | None = None) -> np.ndarray:
    """Load as a (H, W) grayscale array in [0, 1]."""
    with _open(path) as im:
        im = im.convert("L")
        if size:
            im = im.resize((size, size), Image.Resampling.BILINEAR)
        return np.asarray(im, dtype=np.float64) / 255.0
