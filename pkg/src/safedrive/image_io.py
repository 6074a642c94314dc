"""Image loading and saving (8-bit RGB rasters; PPM and PNG via Pillow)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def load_color(path) -> np.ndarray:
    """Load an image as (h, w, 3) float RGB in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=float)
    return arr / 255.0


def save_color(path, image: np.ndarray):
    """Save (h, w, 3) float RGB in [0, 1]; format chosen from the extension."""
    arr = np.clip(np.asarray(image) * 255.0, 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)
