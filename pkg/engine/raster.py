"""
Raster primitives for text-line images.

Everything here is a pure function of its inputs: binarization, skew and
slant normalization, bottom water-reservoir extraction, run-length
smoothing and the projection/profile measurements the rest of the engine
is built on. Binary images always use ink = 1, background = 0.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from PIL import Image
from scipy import ndimage

from engine.errors import EmptyImage, InsufficientInk

logger = logging.getLogger(__name__)

MAX_SKEW_DEG = 45.0
SLANT_SEARCH_DEG = 45
MIN_RESERVOIR_ROWS = 2


# ---------------------------------
# Image model
# ---------------------------------
@dataclass(frozen=True, eq=False)
class RasterImage:
    """Row-major pixel grid; ``depth`` tells gray8 (0..255) from binary (0/1 ink)."""

    pixels: np.ndarray
    depth: Literal["gray8", "binary"] = "binary"

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise EmptyImage(f"image must be a non-empty 2-D grid, got shape {self.pixels.shape}")
        if self.depth not in ("gray8", "binary"):
            raise ValueError(f"unknown depth {self.depth!r}")
        if self.depth == "binary" and self.pixels.max() > 1:
            raise ValueError("binary images may only contain 0 and 1")

    @classmethod
    def gray(cls, pixels) -> "RasterImage":
        return cls(np.ascontiguousarray(pixels, dtype=np.uint8), "gray8")

    @classmethod
    def binary(cls, pixels) -> "RasterImage":
        arr = np.asarray(pixels)
        return cls(np.ascontiguousarray(arr != 0, dtype=np.uint8), "binary")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def ink(self) -> np.ndarray:
        """Boolean ink mask (binary images only)."""
        return self.pixels.astype(bool)

    def has_ink(self) -> bool:
        return bool(self.pixels.any())


@dataclass(frozen=True)
class SkewEstimate:
    delta: float
    support: int


@dataclass(frozen=True, eq=False)
class Reservoir:
    rows: np.ndarray
    cols: np.ndarray
    bbox: tuple[int, int, int, int]  # top, left, bottom, right

    @property
    def height_rows(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def area(self) -> int:
        return int(self.rows.size)

    @property
    def pixel_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(zip(self.rows.tolist(), self.cols.tolist()))


@dataclass(frozen=True, eq=False)
class ProfileSet:
    vertical_projection: np.ndarray
    horizontal_projection: np.ndarray
    upper_profile: np.ndarray
    lower_profile: np.ndarray
    crossings: np.ndarray


# ---------------------------------
# Binarization
# ---------------------------------
def otsu_threshold(gray: np.ndarray) -> int | None:
    """
    Threshold t maximizing between-class variance of {<= t} vs {> t}.

    Returns None when no split has positive variance (constant image).
    Ties go to the lowest t (np.argmax returns the first maximum).
    """
    hist = np.bincount(gray.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    omega = np.cumsum(hist) / total
    mu = np.cumsum(hist * np.arange(256)) / total
    mu_total = mu[-1]
    valid = (omega > 0) & (omega < 1)
    sigma_b = np.zeros(256)
    sigma_b[valid] = (mu_total * omega[valid] - mu[valid]) ** 2 / (omega[valid] * (1.0 - omega[valid]))
    if not valid.any() or sigma_b.max() <= 0:
        return None
    return int(np.argmax(sigma_b))


def binarize(img: RasterImage) -> RasterImage:
    """Global Otsu binarization; darker pixels become ink (1)."""
    if img.depth == "binary":
        return RasterImage.binary(img.pixels.copy())
    threshold = otsu_threshold(img.pixels)
    if threshold is None:
        logger.debug("constant-intensity image, returning blank binary image")
        return RasterImage.binary(np.zeros_like(img.pixels))
    return RasterImage.binary(img.pixels <= threshold)


# ---------------------------------
# Skew and slant
# ---------------------------------
def estimate_skew(img: RasterImage) -> SkewEstimate:
    """Least-squares line through the bottom-most ink row of every inked column."""
    ink = img.ink
    cols = np.flatnonzero(ink.any(axis=0))
    if cols.size < 2:
        raise InsufficientInk(f"skew estimation needs ink in >= 2 columns, found {cols.size}")
    bottoms = img.height - 1 - np.argmax(ink[::-1, cols], axis=0)
    slope = np.polyfit(cols.astype(np.float64), bottoms.astype(np.float64), 1)[0]
    delta = math.degrees(math.atan(slope))
    if abs(delta) > MAX_SKEW_DEG:
        logger.warning(f"skew {delta:.2f} deg outside +/-{MAX_SKEW_DEG}, clamping")
        delta = math.copysign(MAX_SKEW_DEG, delta)
    return SkewEstimate(delta=delta, support=int(cols.size))


def rotate(img: RasterImage, degrees: float) -> RasterImage:
    """
    Nearest-neighbour rotation about the centre on a grown canvas.

    A positive angle makes a horizontal baseline descend to the right
    (row index grows with column), i.e. the convention estimate_skew reports.
    """
    if degrees == 0:
        return RasterImage(img.pixels.copy(), img.depth)
    # scipy's positive angle lifts the right-hand side in row-down coordinates
    out = ndimage.rotate(img.pixels, -degrees, reshape=True, order=0, mode="constant", cval=0, prefilter=False)
    return RasterImage(np.ascontiguousarray(out, dtype=np.uint8), img.depth)


def deskew(img: RasterImage, delta: float) -> RasterImage:
    if abs(delta) > MAX_SKEW_DEG:
        raise ValueError(f"|delta| must be <= {MAX_SKEW_DEG}, got {delta}")
    return rotate(img, -delta)


def _shear_offsets(height: int, degrees: float) -> np.ndarray:
    return np.rint((height - 1 - np.arange(height)) * math.tan(math.radians(degrees))).astype(np.int64)


def shear(img: RasterImage, degrees: float) -> RasterImage:
    """Horizontal shear: row y moves right by (h-1-y)*tan(angle), canvas grows to fit."""
    offsets = _shear_offsets(img.height, degrees)
    offsets = offsets - offsets.min()
    out = np.zeros((img.height, img.width + int(offsets.max())), dtype=np.uint8)
    for y, off in enumerate(offsets):
        out[y, off:off + img.width] = img.pixels[y]
    return RasterImage(out, img.depth)


def estimate_slant(img: RasterImage) -> int:
    """
    Shear angle in [-45, 45] (1 deg steps) whose vertical projection has the
    largest variance. Ties prefer the smallest |angle|, then the lower angle.
    """
    ys, xs = np.nonzero(img.ink)
    if ys.size == 0:
        return 0
    pad = img.height
    canvas = img.width + 2 * pad
    best_angle, best_var = 0, -1.0
    for angle in sorted(range(-SLANT_SEARCH_DEG, SLANT_SEARCH_DEG + 1), key=lambda a: (abs(a), a)):
        shifted = xs + _shear_offsets(img.height, angle)[ys] + pad
        variance = float(np.bincount(shifted, minlength=canvas).var())
        if variance > best_var:
            best_angle, best_var = angle, variance
    return best_angle


def deslant(img: RasterImage) -> RasterImage:
    if not img.has_ink():
        return RasterImage(img.pixels.copy(), img.depth)
    angle = estimate_slant(img)
    logger.debug(f"deslant angle {angle} deg")
    return shear(img, angle) if angle else RasterImage(img.pixels.copy(), img.depth)


# ---------------------------------
# Water reservoirs
# ---------------------------------
def _escaped_background(background: np.ndarray) -> np.ndarray:
    """
    Escape map for a (flipped) background mask where water moves down,
    left or right. Rows only depend on the row below, so a single
    bottom-up pass with per-row run labelling reaches the fixpoint.
    """
    height = background.shape[0]
    escaped = np.zeros_like(background)
    for r in range(height - 1, -1, -1):
        row = background[r]
        if r == height - 1 or r == 0:
            seeds = row.copy()
        else:
            seeds = row & escaped[r + 1]
            seeds[0] |= row[0]
            seeds[-1] |= row[-1]
        if not seeds.any():
            continue
        labels, _ = ndimage.label(row)
        hit = np.unique(labels[seeds])
        escaped[r] = np.isin(labels, hit[hit > 0])
    return escaped


def reservoir_mask(img: RasterImage) -> np.ndarray:
    """Boolean mask of every trapped bottom-reservoir pixel (before size filtering)."""
    background = ~img.ink[::-1]
    trapped = background & ~_escaped_background(background)
    return trapped[::-1]


def bottom_reservoirs(img: RasterImage) -> list[Reservoir]:
    trapped = reservoir_mask(img)
    labels, count = ndimage.label(trapped)
    reservoirs: list[Reservoir] = []
    for index, region in enumerate(ndimage.find_objects(labels), start=1):
        if region is None:
            continue
        rows, cols = np.nonzero(labels[region] == index)
        rows = rows + region[0].start
        cols = cols + region[1].start
        bbox = (int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max()))
        reservoir = Reservoir(rows=rows, cols=cols, bbox=bbox)
        if reservoir.height_rows >= MIN_RESERVOIR_ROWS:
            reservoirs.append(reservoir)
    return reservoirs


# ---------------------------------
# Smoothing, profiles, resizing
# ---------------------------------
def rlsa_horizontal(img: RasterImage, t: int) -> RasterImage:
    """Fill interior horizontal background runs shorter than t."""
    if t < 0:
        raise ValueError("run-length threshold must be >= 0")
    out = img.pixels.copy()
    if t <= 1:
        return RasterImage(out, "binary")
    for r in range(img.height):
        idx = np.flatnonzero(img.pixels[r])
        if idx.size < 2:
            continue
        gaps = np.diff(idx) - 1
        for start, gap in zip(idx[:-1][(gaps > 0) & (gaps < t)], gaps[(gaps > 0) & (gaps < t)]):
            out[r, start + 1:start + 1 + gap] = 1
    return RasterImage(out, "binary")


def profiles(img: RasterImage) -> ProfileSet:
    ink = img.ink
    inked = ink.any(axis=0)
    upper = np.where(inked, np.argmax(ink, axis=0), -1)
    lower = np.where(inked, img.height - 1 - np.argmax(ink[::-1], axis=0), -1)
    padded = np.vstack([np.zeros((1, img.width), dtype=np.int8), ink.astype(np.int8)])
    crossings = (np.diff(padded, axis=0) == 1).sum(axis=0)
    return ProfileSet(
        vertical_projection=ink.sum(axis=0),
        horizontal_projection=ink.sum(axis=1),
        upper_profile=upper,
        lower_profile=lower,
        crossings=crossings,
    )


def resize_nearest(img: RasterImage, width: int, height: int) -> RasterImage:
    pil = Image.fromarray(img.pixels)
    out = np.asarray(pil.resize((width, height), Image.Resampling.NEAREST))
    return RasterImage(np.ascontiguousarray(out), img.depth)


def rescale_to_height(img: RasterImage, height: int) -> tuple[RasterImage, float]:
    """Aspect-preserving nearest-neighbour rescale; returns the image and the scale factor."""
    scale = height / img.height
    width = max(1, int(math.floor(img.width * scale + 0.5)))
    if width == img.width and height == img.height:
        return RasterImage(img.pixels.copy(), img.depth), 1.0
    return resize_nearest(img, width, height), scale
