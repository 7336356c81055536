"""
Frame-level features for sliding-window line models.

A line is rescaled to the window height, cut into overlapping vertical
windows and every window is described by a PHOG (or LGH) histogram of its
ink and, optionally, of the bottom-reservoir background that lies inside it.
"""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import ndimage

from engine.errors import EmptyImage
from engine.raster import RasterImage, bottom_reservoirs, profiles, rescale_to_height

logger = logging.getLogger(__name__)

FeatureMode = Literal["fg", "bg", "fg+bg"]
FeatureKind = Literal["phog", "lgh"]

LGH_GRID = 4
LGH_BINS = 8


# ---------------------------------
# Parameter and sequence types
# ---------------------------------
@dataclass(frozen=True)
class WindowSpec:
    win_height: int = 40
    win_width: int = 6
    step: int = 3

    def __post_init__(self):
        if self.win_width < 1 or self.win_height < 1:
            raise ValueError("window dimensions must be >= 1")
        if not 1 <= self.step <= self.win_width:
            raise ValueError(f"step must lie in [1, {self.win_width}], got {self.step}")

    def column_span(self, a: int, b: int) -> tuple[int, int]:
        """Pixel columns [start, end) covered by frames [a, b) in the rescaled line."""
        return a * self.step, (b - 1) * self.step + self.win_width


@dataclass(frozen=True)
class PhogParams:
    levels: int = 2
    bins: int = 8

    @property
    def dim(self) -> int:
        return self.bins * sum(4 ** i for i in range(self.levels + 1))


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """Observation O: one row per frame. ``scale`` maps original columns to framed columns."""

    frames: np.ndarray
    provenance: str = "foreground"
    scale: float = 1.0

    def __post_init__(self):
        if self.frames.ndim != 2:
            raise ValueError("frames must be a 2-D array (frames x dim)")
        if not np.isfinite(self.frames).all():
            raise ValueError("feature frames must be finite")

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]

    def slice(self, start: int, end: int) -> "FeatureSequence":
        return FeatureSequence(self.frames[start:end], self.provenance, self.scale)


# ---------------------------------
# Framing
# ---------------------------------
def frame_windows(img: RasterImage, spec: WindowSpec) -> list[np.ndarray]:
    """Cut a height-normalized line into overlapping windows (always >= 1)."""
    if img.width == 0 or img.height == 0:
        raise EmptyImage("cannot frame an empty image")
    scaled, _ = rescale_to_height(img, spec.win_height)
    return _cut_windows(scaled.pixels, spec)


def _cut_windows(pixels: np.ndarray, spec: WindowSpec) -> list[np.ndarray]:
    width = pixels.shape[1]
    if width < spec.win_width:
        padded = np.zeros((pixels.shape[0], spec.win_width), dtype=pixels.dtype)
        padded[:, :width] = pixels
        return [padded]
    return [pixels[:, x:x + spec.win_width] for x in range(0, width - spec.win_width + 1, spec.step)]


# ---------------------------------
# Gradient histograms
# ---------------------------------
def _gradient_bins(window: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel orientation bin and magnitude from 3x3 Sobel with replicate borders."""
    data = window.astype(np.float64)
    gx = ndimage.sobel(data, axis=1, mode="nearest")
    gy = ndimage.sobel(data, axis=0, mode="nearest")
    magnitude = np.hypot(gx, gy)
    angle = np.degrees(np.arctan2(gy, gx)) % 360.0
    index = np.minimum((angle // (360.0 / bins)).astype(np.int64), bins - 1)
    return index, magnitude


def _cell_histograms(index: np.ndarray, magnitude: np.ndarray, grid: int, bins: int) -> np.ndarray:
    height, width = index.shape
    row_cell = np.searchsorted((np.arange(1, grid) * height) // grid, np.arange(height), side="right")
    col_cell = np.searchsorted((np.arange(1, grid) * width) // grid, np.arange(width), side="right")
    cell = row_cell[:, None] * grid + col_cell[None, :]
    flat = (cell * bins + index).ravel()
    return np.bincount(flat, weights=magnitude.ravel(), minlength=grid * grid * bins)


def _l1(block: np.ndarray) -> np.ndarray:
    total = block.sum()
    return block / total if total > 0 else block


def phog(window: np.ndarray, p: PhogParams = PhogParams()) -> np.ndarray:
    """Pyramid of magnitude-weighted orientation histograms, L1-normalized per level."""
    if window.size == 0:
        raise EmptyImage("PHOG window is empty")
    index, magnitude = _gradient_bins(window, p.bins)
    levels = [_l1(_cell_histograms(index, magnitude, 2 ** level, p.bins)) for level in range(p.levels + 1)]
    return np.concatenate(levels)


def lgh(window: np.ndarray) -> np.ndarray:
    """Local gradient histogram: 4x4 cells x 8 bins, each cell L1-normalized."""
    if window.size == 0:
        raise EmptyImage("LGH window is empty")
    index, magnitude = _gradient_bins(window, LGH_BINS)
    cells = _cell_histograms(index, magnitude, LGH_GRID, LGH_BINS).reshape(LGH_GRID * LGH_GRID, LGH_BINS)
    sums = cells.sum(axis=1, keepdims=True)
    return np.divide(cells, sums, out=np.zeros_like(cells), where=sums > 0).ravel()


def descriptor_dim(kind: FeatureKind, p: PhogParams) -> int:
    return p.dim if kind == "phog" else LGH_GRID * LGH_GRID * LGH_BINS


# ---------------------------------
# Line features
# ---------------------------------
def background_mask(img: RasterImage) -> RasterImage:
    """Binary image whose foreground is the union of the bottom reservoirs."""
    mask = np.zeros((img.height, img.width), dtype=np.uint8)
    for reservoir in bottom_reservoirs(img):
        mask[reservoir.rows, reservoir.cols] = 1
    return RasterImage.binary(mask)


def extract_line_features(
    img: RasterImage,
    spec: WindowSpec = WindowSpec(),
    p: PhogParams = PhogParams(),
    mode: FeatureMode = "fg+bg",
    kind: FeatureKind = "phog",
    background: RasterImage | None = None,
) -> FeatureSequence:
    """
    One frame per window, left to right.

    ``background`` lets callers pass an already clipped reservoir mask
    (middle-zone spotting); otherwise the line's own reservoirs are used.
    """
    describe = (lambda w: phog(w, p)) if kind == "phog" else lgh

    scaled, scale = rescale_to_height(img, spec.win_height)
    channels: list[list[np.ndarray]] = []
    if mode in ("fg", "fg+bg"):
        channels.append(_cut_windows(scaled.pixels, spec))
    if mode in ("bg", "fg+bg"):
        bg = background if background is not None else background_mask(img)
        bg_scaled, _ = rescale_to_height(bg, spec.win_height)
        channels.append(_cut_windows(bg_scaled.pixels, spec))

    frames = np.array(
        [np.concatenate([describe(windows[i]) for windows in channels]) for i in range(len(channels[0]))]
    )
    provenance = {"fg": "foreground", "bg": "background", "fg+bg": "concatenated"}[mode]
    return FeatureSequence(frames, provenance=provenance, scale=scale)


def dtw_profile_features(word_img: RasterImage) -> list[np.ndarray]:
    """Projection, upper, lower and crossing profiles, each min-max normalized to [0, 1]."""
    if not word_img.has_ink():
        raise EmptyImage("word image has no ink")
    prof = profiles(word_img)
    inked = prof.vertical_projection > 0
    return [
        _minmax(prof.vertical_projection.astype(np.float64)),
        _minmax_inked(prof.upper_profile.astype(np.float64), inked),
        _minmax_inked(prof.lower_profile.astype(np.float64), inked),
        _minmax(prof.crossings.astype(np.float64)),
    ]


def _minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def _minmax_inked(values: np.ndarray, inked: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    out[inked] = _minmax(values[inked])
    return out

