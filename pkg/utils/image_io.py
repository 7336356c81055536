# utils/image_io.py
"""PGM (P5) / PBM (P4) codecs on top of Pillow's PPM plugin."""

from pathlib import Path

import numpy as np
from PIL import Image

from engine.errors import ZoneSpotError
from engine.raster import RasterImage


def load_image(path: str | Path) -> RasterImage:
    """
    Load a line image.

    - P4 / mode "1": returned as binary, black pixels = ink 1
    - P5 / mode "L": returned as gray8
    - anything else Pillow can open is converted to gray8
    """
    try:
        with Image.open(path) as pil:
            pil.load()
            if pil.mode == "1":
                # Pillow decodes PBM black as 0
                return RasterImage.binary(np.asarray(pil.convert("L")) == 0)
            return RasterImage.gray(np.asarray(pil.convert("L")))
    except (OSError, ValueError) as e:
        raise ZoneSpotError(f"cannot read image {path}: {e}") from e


def save_image(img: RasterImage, path: str | Path) -> None:
    """Write binary images as PBM P4 and gray images as PGM P5 (maxval 255)."""
    if img.depth == "binary":
        gray = np.where(img.ink, 0, 255).astype(np.uint8)
        pil = Image.fromarray(gray).convert("1", dither=Image.Dither.NONE)
    else:
        pil = Image.fromarray(img.pixels)
    pil.save(path, format="PPM")
