"""
Three-zone (upper / middle / lower) segmentation of text lines.

The HMM method cuts a line into vertical strips of width alpha * H_L, slides
a patch from top to bottom inside every strip and decodes the resulting
patch sequence against a small zone grammar:

    Space? . Upper? . Middle . Lower? . Space?

The endpoints of the Middle segment give one (upper_row, lower_row) pair
per strip; pairs are repaired against their neighbours and interpolated
into per-column polylines. A projection-profile baseline is kept for
comparison.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from engine.errors import EmptyImage, TrainingError, ZoneError
from engine.features import FeatureSequence, PhogParams, phog
from engine.raster import RasterImage, bottom_reservoirs, resize_nearest
from engine.seqmodel import (
    ENTRY,
    EXIT,
    MixupSchedule,
    ModelSet,
    NetworkNode,
    SpottingNetwork,
    TrainingLine,
    TrainingResult,
    embedded_baum_welch,
    flat_start,
    viterbi,
)

logger = logging.getLogger(__name__)

MIN_LINE_HEIGHT = 4
DECLINE_RATIO = 0.2
LOCAL_STRIPS = 10


class ZoneLabel(str, Enum):
    UPPER = "Upper"
    MIDDLE = "Middle"
    LOWER = "Lower"
    SPACE = "Space"


ZONE_LABELS = [ZoneLabel.SPACE.value, ZoneLabel.UPPER.value, ZoneLabel.MIDDLE.value, ZoneLabel.LOWER.value]


# ---------------------------------
# Types
# ---------------------------------
@dataclass(frozen=True)
class LineHeight:
    value: int
    fallback: bool = False


@dataclass(frozen=True)
class ZoneParams:
    line_height: int
    alpha: float = 1.5
    patch_width: int = 40
    patch_height: int = 8
    v_step: int = 4

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.v_step < 1 or self.patch_height < 1 or self.patch_width < 1:
            raise ValueError("patch size and vertical step must be >= 1")

    @property
    def strip_width(self) -> int:
        return max(1, int(round(self.alpha * self.line_height)))

    def patch_center(self, top: int) -> int:
        return top + (self.patch_height - 1) // 2


@dataclass(frozen=True, eq=False)
class StripFeatures:
    index: int
    x_start: int
    x_end: int  # exclusive, clipped to the line width
    features: FeatureSequence
    tops: np.ndarray  # top row of every patch


@dataclass(frozen=True, eq=False)
class StripAlignment:
    strip: StripFeatures
    labels: list[str]  # zone label per patch
    upper_row: int
    lower_row: int


@dataclass(frozen=True, eq=False)
class ZoneBoundaries:
    """Per-strip boundary rows and the per-column polylines interpolated from them."""

    strips: list[tuple[int, int]]
    strip_upper: np.ndarray
    strip_lower: np.ndarray
    upper_line: np.ndarray
    lower_line: np.ndarray

    def __post_init__(self):
        if (self.upper_line > self.lower_line).any():
            raise ZoneError("upper boundary below lower boundary")
        if (self.upper_line < 0).any():
            raise ZoneError("negative boundary row")

    @property
    def width(self) -> int:
        return self.upper_line.shape[0]

    @classmethod
    def from_strips(
        cls,
        strips: Sequence[tuple[int, int]],
        upper: Sequence[int],
        lower: Sequence[int],
        height: int | None = None,
    ) -> "ZoneBoundaries":
        """Join strip midpoints by straight lines; rows are clamped so upper <= lower."""
        if not strips:
            raise ZoneError("zone boundaries need at least one strip")
        upper = np.asarray(upper, dtype=np.int64)
        lower = np.asarray(lower, dtype=np.int64)
        width = strips[-1][1]
        mids = np.array([(x0 + x1 - 1) / 2.0 for x0, x1 in strips])
        columns = np.arange(width)
        upper_line = np.rint(np.interp(columns, mids, upper)).astype(np.int64)
        lower_line = np.rint(np.interp(columns, mids, lower)).astype(np.int64)
        top = 0
        bottom = height - 1 if height is not None else max(int(upper_line.max()), int(lower_line.max()))
        upper_line = np.clip(upper_line, top, bottom)
        lower_line = np.clip(lower_line, top, bottom)
        upper_line = np.minimum(upper_line, lower_line)
        return cls(list(strips), upper, lower, upper_line, lower_line)


# ---------------------------------
# Line height
# ---------------------------------
def _longest_run(mask: np.ndarray) -> int:
    best = run = 0
    for value in mask:
        run = run + 1 if value else 0
        best = max(best, run)
    return best


def estimate_line_height(img: RasterImage) -> LineHeight:
    """Mode of bottom-reservoir heights (ties to the larger height), clamped to [4, h]."""
    heights = [r.height_rows for r in bottom_reservoirs(img)]
    if heights:
        values, counts = np.unique(heights, return_counts=True)
        value = int(values[counts == counts.max()].max())
        fallback = False
    else:
        value = _longest_run(img.ink.any(axis=1))
        fallback = True
        logger.debug(f"no bottom reservoirs, falling back to projection run height {value}")
    value = min(max(value, MIN_LINE_HEIGHT), img.height)
    return LineHeight(value, fallback)


# ---------------------------------
# Patch features
# ---------------------------------
def strip_bounds(width: int, strip_width: int) -> list[tuple[int, int]]:
    return [(x, min(x + strip_width, width)) for x in range(0, width, strip_width)]


def zone_patch_sequence(img: RasterImage, zp: ZoneParams, p: PhogParams = PhogParams()) -> list[StripFeatures]:
    """
    One vertical patch sequence per strip. Every strip is resized to the
    canonical patch width (rows untouched) so each W_P x H_P sub-window
    becomes a patch_width x patch_height patch before PHOG encoding.
    """
    if img.height < zp.patch_height:
        raise ZoneError(f"line height {img.height} is below the patch height {zp.patch_height}")
    w = zp.strip_width
    tops = np.arange(0, img.height - zp.patch_height + 1, zp.v_step)
    sequences = []
    for index, (x0, x1) in enumerate(strip_bounds(img.width, w)):
        block = np.zeros((img.height, w), dtype=np.uint8)
        block[:, : x1 - x0] = img.pixels[:, x0:x1]
        canonical = resize_nearest(RasterImage(block, img.depth), zp.patch_width, img.height).pixels
        frames = np.array([phog(canonical[t:t + zp.patch_height], p) for t in tops])
        sequences.append(StripFeatures(index, x0, x1, FeatureSequence(frames, provenance="zone-patches"), tops))
    return sequences


# ---------------------------------
# Training
# ---------------------------------
def label_patches(img: RasterImage, strip: StripFeatures, zp: ZoneParams, upper_row: int, lower_row: int) -> list[str]:
    """Patch labels from ground-truth rows: the band holding the patch centre decides."""
    ink = img.ink[:, strip.x_start:strip.x_end]
    has_upper = bool(ink[:upper_row].any())
    has_lower = bool(ink[lower_row + 1:].any())
    labels = []
    for top in strip.tops:
        centre = zp.patch_center(int(top))
        if centre < upper_row:
            labels.append(ZoneLabel.UPPER.value if has_upper else ZoneLabel.SPACE.value)
        elif centre > lower_row:
            labels.append(ZoneLabel.LOWER.value if has_lower else ZoneLabel.SPACE.value)
        else:
            labels.append(ZoneLabel.MIDDLE.value)
    return labels


def collapse_runs(labels: Sequence[str]) -> list[str]:
    return [label for i, label in enumerate(labels) if i == 0 or labels[i - 1] != label]


def zone_training_lines(
    img: RasterImage, truth: ZoneBoundaries, zp: ZoneParams, p: PhogParams = PhogParams(), line_id: str = ""
) -> list[TrainingLine]:
    """Vertical label sequences for every inked strip of one ground-truth line."""
    lines = []
    for strip in zone_patch_sequence(img, zp, p):
        if not img.ink[:, strip.x_start:strip.x_end].any():
            continue
        upper = int(round(truth.upper_line[strip.x_start:strip.x_end].mean()))
        lower = int(round(truth.lower_line[strip.x_start:strip.x_end].mean()))
        symbols = collapse_runs(label_patches(img, strip, zp, upper, lower))
        lines.append(TrainingLine(strip.features, symbols, f"{line_id}#{strip.index}"))
    return lines


def train_zone_hmm(
    lines: Sequence[TrainingLine],
    n_states: int = 8,
    iterations: int = 3,
    mixup_schedule: MixupSchedule | None = None,
    var_floor_scale: float = 1e-4,
) -> TrainingResult:
    """One HMM per zone label, trained on vertical label sequences."""
    seen = {s for line in lines for s in line.symbols}
    missing = [label for label in ZONE_LABELS if label not in seen]
    if missing:
        raise TrainingError(f"zone training data has no {', '.join(missing)} patches")
    models = flat_start(lines, ZONE_LABELS, n_states=n_states, var_floor_scale=var_floor_scale)
    return embedded_baum_welch(models, lines, iterations, mixup_schedule)


# ---------------------------------
# Alignment and smoothing
# ---------------------------------
def build_zone_network(models: ModelSet) -> SpottingNetwork:
    space_a, upper, middle, lower, space_b = range(5)
    nodes = [
        NetworkNode(ZoneLabel.SPACE.value),
        NetworkNode(ZoneLabel.UPPER.value),
        NetworkNode(ZoneLabel.MIDDLE.value, "middle"),
        NetworkNode(ZoneLabel.LOWER.value),
        NetworkNode(ZoneLabel.SPACE.value),
    ]
    pairs = [
        (ENTRY, space_a), (ENTRY, upper), (ENTRY, middle),
        (space_a, upper), (space_a, middle),
        (upper, middle),
        (middle, lower), (middle, space_b), (middle, EXIT),
        (lower, space_b), (lower, EXIT),
        (space_b, EXIT),
    ]
    return SpottingNetwork(nodes, [(a, b, 0.0) for a, b in pairs], "zone-filler", models)


def align_zones(
    img: RasterImage, strips: Sequence[StripFeatures], models: ModelSet, zp: ZoneParams
) -> list[StripAlignment | None]:
    """Decode every inked strip; ink-free strips yield None."""
    network = build_zone_network(models)
    out: list[StripAlignment | None] = []
    for strip in strips:
        ink = img.ink[:, strip.x_start:strip.x_end]
        rows = np.flatnonzero(ink.any(axis=1))
        if rows.size == 0:
            out.append(None)
            continue
        alignment = viterbi(network, strip.features)
        labels = [network.nodes[node].label for node, _ in alignment.frame_labels]
        a, b = alignment.span("middle")
        upper_row = zp.patch_center(int(strip.tops[a]))
        lower_row = zp.patch_center(int(strip.tops[b - 1]))
        if ZoneLabel.UPPER.value not in labels:
            upper_row = int(rows[0])
        if ZoneLabel.LOWER.value not in labels:
            lower_row = int(rows[-1])
        upper_row, lower_row = min(upper_row, lower_row), max(upper_row, lower_row)
        out.append(StripAlignment(strip, labels, upper_row, lower_row))
    return out


def repair_outliers(values: Sequence[float | None], line_height: int) -> list[float | None]:
    """
    Replace a row by the mean of its nearest present neighbours when it
    strays more than H_L/4 from that mean.

    Rows are repaired worst first (ties to the lower index). The neighbours
    of a repaired row are its context and stay as they are.
    """
    limit = line_height / 4.0
    present = [i for i, v in enumerate(values) if v is not None]
    candidates = []
    for k, i in enumerate(present):
        neighbours = [values[present[j]] for j in (k - 1, k + 1) if 0 <= j < len(present)]
        if not neighbours:
            continue
        mean = sum(neighbours) / len(neighbours)
        deviation = abs(values[i] - mean)
        if deviation > limit:
            candidates.append((-deviation, k, mean))
    out = list(values)
    kept: set[int] = set()
    for _, k, mean in sorted(candidates):
        if k in kept:
            continue
        out[present[k]] = mean
        kept.update((k - 1, k, k + 1))
    return out


def smooth_boundaries(
    strips: Sequence[tuple[int, int]],
    rows: Sequence[tuple[int, int] | None],
    line_height: int,
    height: int | None = None,
) -> ZoneBoundaries:
    """Context repair then linear interpolation between strip midpoints; missing strips are interpolated."""
    if not strips:
        raise ZoneError("no strips to smooth")
    keep = [i for i, r in enumerate(rows) if r is not None]
    if not keep:
        raise ZoneError("no strip produced a zone alignment")
    upper = repair_outliers([r[0] if r else None for r in rows], line_height)
    lower = repair_outliers([r[1] if r else None for r in rows], line_height)
    mids = np.array([(x0 + x1 - 1) / 2.0 for x0, x1 in strips])
    known = mids[keep]
    upper_rows = np.rint(np.interp(mids, known, [upper[i] for i in keep])).astype(np.int64)
    lower_rows = np.rint(np.interp(mids, known, [lower[i] for i in keep])).astype(np.int64)
    lower_rows = np.maximum(lower_rows, upper_rows)
    return ZoneBoundaries.from_strips(strips, upper_rows, lower_rows, height)


@dataclass(frozen=True, eq=False)
class ZoneSegmentation:
    boundaries: ZoneBoundaries
    line_height: LineHeight
    alignments: list[StripAlignment | None]


def segment_zones(
    img: RasterImage,
    models: ModelSet,
    alpha: float = 1.5,
    patch_width: int = 40,
    patch_height: int = 8,
    v_step: int = 4,
    p: PhogParams = PhogParams(),
) -> ZoneSegmentation:
    """Line height -> strip patches -> zone alignment -> smoothed boundaries."""
    if not img.has_ink():
        raise EmptyImage("cannot segment zones of a blank line")
    line_height = estimate_line_height(img)
    zp = ZoneParams(line_height.value, alpha, patch_width, patch_height, v_step)
    strips = zone_patch_sequence(img, zp, p)
    alignments = align_zones(img, strips, models, zp)
    rows = [(a.upper_row, a.lower_row) if a else None for a in alignments]
    bounds = [(s.x_start, s.x_end) for s in strips]
    boundaries = smooth_boundaries(bounds, rows, line_height.value, img.height)
    return ZoneSegmentation(boundaries, line_height, alignments)


# ---------------------------------
# Projection baseline
# ---------------------------------
def _projection_rows(ink: np.ndarray) -> tuple[int, int] | None:
    proj = ink.sum(axis=1).astype(np.float64)
    if proj.sum() == 0:
        return None
    height = proj.shape[0]
    matra = int(np.argmax(proj))
    upper = min(matra + 1, height - 1)
    rows = np.arange(height)
    centroid = max(int(round((rows * proj).sum() / proj.sum())), upper)
    middle_mean = proj[upper:centroid + 1].mean()
    last_ink = int(np.flatnonzero(proj)[-1])
    lower = last_ink
    for r in range(centroid + 1, height):
        if proj[r] < DECLINE_RATIO * middle_mean:
            lower = r - 1
            break
    return upper, max(lower, upper)


def projection_zone_baseline(img: RasterImage, mode: Literal["global", "local"] = "global") -> ZoneBoundaries:
    """Headline = projection peak, lower boundary = first sharp decline below the centroid."""
    if not img.has_ink():
        raise EmptyImage("projection baseline needs ink")
    if mode == "global":
        strips = [(0, img.width)]
    elif mode == "local":
        strips = strip_bounds(img.width, max(1, img.width // LOCAL_STRIPS))
    else:
        raise ValueError(f"unknown projection mode {mode!r}")
    rows = [_projection_rows(img.ink[:, x0:x1]) for x0, x1 in strips]
    if all(r is None for r in rows):
        raise EmptyImage("projection baseline needs ink")
    keep = [i for i, r in enumerate(rows) if r is not None]
    mids = np.array([(x0 + x1 - 1) / 2.0 for x0, x1 in strips])
    upper = np.rint(np.interp(mids, mids[keep], [rows[i][0] for i in keep])).astype(np.int64)
    lower = np.rint(np.interp(mids, mids[keep], [rows[i][1] for i in keep])).astype(np.int64)
    return ZoneBoundaries.from_strips(strips, upper, np.maximum(lower, upper), img.height)


# ---------------------------------
# Middle zone extraction
# ---------------------------------
@dataclass(frozen=True, eq=False)
class MiddleZone:
    """Full-size band images; rows outside a band are blank."""

    middle: RasterImage
    reservoirs: RasterImage
    upper: RasterImage
    lower: RasterImage
    top: int
    bottom: int

    def band(self) -> tuple[RasterImage, RasterImage]:
        """Middle ink and clipped reservoirs cropped to the rows the band spans."""
        rows = slice(self.top, self.bottom + 1)
        return RasterImage(self.middle.pixels[rows].copy()), RasterImage(self.reservoirs.pixels[rows].copy())

    def cropped(self, x_start: int, x_end: int) -> "MiddleZone":
        cols = slice(max(0, x_start), max(x_start + 1, min(x_end, self.middle.width)))
        return MiddleZone(
            RasterImage(self.middle.pixels[:, cols].copy()),
            RasterImage(self.reservoirs.pixels[:, cols].copy()),
            RasterImage(self.upper.pixels[:, cols].copy()),
            RasterImage(self.lower.pixels[:, cols].copy()),
            self.top,
            self.bottom,
        )


def band_masks(height: int, zb: ZoneBoundaries) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = np.arange(height)[:, None]
    above = rows < zb.upper_line[None, :]
    below = rows > zb.lower_line[None, :]
    return above, ~above & ~below, below


def extract_middle_zone(img: RasterImage, zb: ZoneBoundaries) -> MiddleZone:
    """Split the ink into Z_u / middle / Z_l; reservoirs come from the full line and are clipped to the band."""
    if zb.width != img.width:
        raise ZoneError(f"boundaries cover {zb.width} columns, image has {img.width}")
    ink = img.ink
    above, inside, below = band_masks(img.height, zb)
    trapped = np.zeros_like(ink)
    for r in bottom_reservoirs(img):
        trapped[r.rows, r.cols] = True
    return MiddleZone(
        middle=RasterImage.binary(ink & inside),
        reservoirs=RasterImage.binary(trapped & inside),
        upper=RasterImage.binary(ink & above),
        lower=RasterImage.binary(ink & below),
        top=int(zb.upper_line.min()),
        bottom=int(zb.lower_line.max()),
    )


def zone_boundary_error(predicted: ZoneBoundaries, truth: ZoneBoundaries) -> float:
    """Mean absolute per-column error, averaged over the upper and lower lines."""
    if predicted.width != truth.width:
        raise ZoneError(f"boundary widths differ: {predicted.width} vs {truth.width}")
    upper = np.abs(predicted.upper_line - truth.upper_line)
    lower = np.abs(predicted.lower_line - truth.lower_line)
    return float((upper + lower).mean() / 2.0)


# ---------------------------------
# TSV codec
# ---------------------------------
def format_zone_boundaries(zb: ZoneBoundaries) -> str:
    lines = [
        f"{i}\t{x0}\t{x1}\t{int(u)}\t{int(l)}"
        for i, ((x0, x1), u, l) in enumerate(zip(zb.strips, zb.strip_upper, zb.strip_lower))
    ]
    return "\n".join(lines) + "\n"


def parse_zone_boundaries(text: str, height: int | None = None) -> ZoneBoundaries:
    strips, upper, lower = [], [], []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise ZoneError(f"line {line_no}: expected 5 tab-separated columns, got {len(cols)}")
        try:
            index, x0, x1, u, l = (int(c) for c in cols)
        except ValueError:
            raise ZoneError(f"line {line_no}: non-integer field") from None
        if index != len(strips):
            raise ZoneError(f"line {line_no}: strip index {index} out of order")
        strips.append((x0, x1))
        upper.append(u)
        lower.append(l)
    return ZoneBoundaries.from_strips(strips, upper, lower, height)


def save_zone_boundaries(zb: ZoneBoundaries, path: str | Path) -> None:
    Path(path).write_text(format_zone_boundaries(zb), encoding="utf-8")


def load_zone_boundaries(path: str | Path, height: int | None = None) -> ZoneBoundaries:
    return parse_zone_boundaries(Path(path).read_text(encoding="utf-8"), height)
