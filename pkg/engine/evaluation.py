"""
Retrieval metrics for spotting runs and the word-level DTW baseline.

Precision = TP / (TP + FP), recall = TP / (TP + FN). A hit is a true
positive when its keyword occurs in the ground-truth transcription of its
line. Average precision divides by the number of relevant lines in the
ground truth, so relevant lines that never made it into the hit list
count as misses.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from engine.errors import BandTooNarrow, EmptyImage, EvaluationError
from engine.features import dtw_profile_features
from engine.lexmap import split_graphemes
from engine.raster import RasterImage
from engine.spotting import LocalThreshold, SpotHit

logger = logging.getLogger(__name__)


# ---------------------------------
# Ground truth
# ---------------------------------
@dataclass(frozen=True)
class GroundTruth:
    lines: dict[str, frozenset[str]]

    @classmethod
    def from_transcriptions(cls, transcriptions: Mapping[str, str], keywords: Iterable[str]) -> "GroundTruth":
        keywords = set(keywords)
        return cls({lid: frozenset(set(text.split()) & keywords) for lid, text in transcriptions.items()})

    def relevant(self, keyword: str) -> set[str]:
        return {lid for lid, present in self.lines.items() if keyword in present}

    def is_relevant(self, hit: SpotHit) -> bool:
        return hit.keyword in self.lines.get(hit.line_id, frozenset())


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


@dataclass
class EvalReport:
    average_precision: dict[str, float]
    mean_ap: float
    curve: list[CurvePoint]
    curve_map: float
    excluded: list[str] = field(default_factory=list)
    by_length: dict[int, float] = field(default_factory=dict)


def _ranked(hits: Iterable[SpotHit]) -> list[SpotHit]:
    return sorted((h for h in hits if h.kept), key=lambda h: (-h.score, h.line_id))


def pr_curve(hits: Sequence[SpotHit], gt: GroundTruth) -> list[CurvePoint]:
    """One point per distinct score, sweeping the threshold from the highest score down."""
    if not gt.lines:
        raise EvaluationError("ground truth is empty")
    keywords = {h.keyword for h in hits}
    total = sum(len(gt.relevant(k)) for k in keywords)
    ranked = _ranked(hits)
    points = []
    tp = fp = 0
    for i, hit in enumerate(ranked):
        if gt.is_relevant(hit):
            tp += 1
        else:
            fp += 1
        if i + 1 < len(ranked) and ranked[i + 1].score == hit.score:
            continue
        recall = tp / total if total else 0.0
        points.append(CurvePoint(hit.score, tp / (tp + fp), recall, tp, fp, total - tp))
    return points


def average_precision(relevance: Sequence[bool], n_relevant: int) -> float:
    """Mean of precision@k over the ranks k holding a relevant item."""
    if n_relevant <= 0:
        raise EvaluationError("average precision needs at least one relevant item")
    hits = 0
    total = 0.0
    for k, relevant in enumerate(relevance, start=1):
        if relevant:
            hits += 1
            total += hits / k
    return total / n_relevant


def mean_average_precision(hits: Sequence[SpotHit], gt: GroundTruth) -> tuple[float, dict[str, float], list[str]]:
    """MAP over keywords that have relevant lines; returns (map, per-keyword AP, excluded keywords)."""
    by_keyword: dict[str, list[SpotHit]] = defaultdict(list)
    for hit in hits:
        by_keyword[hit.keyword].append(hit)
    per_keyword: dict[str, float] = {}
    excluded: list[str] = []
    for keyword in sorted(by_keyword):
        relevant = gt.relevant(keyword)
        if not relevant:
            excluded.append(keyword)
            continue
        ranked = _ranked(by_keyword[keyword])
        per_keyword[keyword] = average_precision([h.line_id in relevant for h in ranked], len(relevant))
    if not per_keyword:
        raise EvaluationError("no keyword has a relevant line in the ground truth")
    return float(np.mean(list(per_keyword.values()))), per_keyword, excluded


def curve_area(curve: Sequence[CurvePoint]) -> float:
    """Step-wise area under the precision/recall curve."""
    area = 0.0
    previous = 0.0
    for point in curve:
        area += (point.recall - previous) * point.precision
        previous = point.recall
    return area


def precision_at_recall(curve: Sequence[CurvePoint], recall: float) -> float:
    """Interpolated precision: best precision at any recall >= the requested level."""
    candidates = [p.precision for p in curve if p.recall >= recall - 1e-12]
    return max(candidates) if candidates else 0.0


def length_breakdown(per_keyword: Mapping[str, float]) -> dict[int, float]:
    """Mean AP grouped by keyword length in graphemes."""
    groups: dict[int, list[float]] = defaultdict(list)
    for keyword, ap in per_keyword.items():
        groups[len(split_graphemes(keyword))].append(ap)
    return {length: float(np.mean(values)) for length, values in sorted(groups.items())}


def check_line_coverage(hits: Sequence[SpotHit], gt: GroundTruth) -> None:
    """A hit list and its ground truth must cover the same line ids."""
    scored = {h.line_id for h in hits}
    unknown = sorted(scored - set(gt.lines))
    if unknown:
        raise EvaluationError(f"hits reference lines missing from the ground truth: {unknown}")
    unscored = sorted(set(gt.lines) - scored)
    if unscored:
        raise EvaluationError(f"ground-truth lines without any hit: {unscored}")


def evaluate(hits: Sequence[SpotHit], gt: GroundTruth) -> EvalReport:
    missing = sorted({h.line_id for h in hits} - set(gt.lines))
    if missing:
        raise EvaluationError(f"hits reference lines missing from the ground truth: {missing}")
    mean_ap, per_keyword, excluded = mean_average_precision(hits, gt)
    curve = pr_curve(hits, gt)
    if excluded:
        logger.info(f"{len(excluded)} keywords without relevant lines excluded from MAP")
    return EvalReport(per_keyword, mean_ap, curve, curve_area(curve), excluded, length_breakdown(per_keyword))


def eliminated_true_positives(before: Sequence[SpotHit], after: Sequence[SpotHit], gt: GroundTruth) -> list[tuple[str, str]]:
    """(line_id, keyword) pairs kept and relevant in ``before`` but no longer kept in ``after``."""
    kept_after = {(h.line_id, h.keyword) for h in after if h.kept}
    lost = {(h.line_id, h.keyword) for h in before if h.kept and gt.is_relevant(h)} - kept_after
    return sorted(lost)


# ---------------------------------
# Threshold fitting
# ---------------------------------
def _best_f1_threshold(hits: Sequence[SpotHit], gt: GroundTruth) -> float:
    keywords = {h.keyword for h in hits}
    total = sum(len(gt.relevant(k)) for k in keywords)
    best_theta, best_f1 = float("inf"), -1.0
    tp = fp = 0
    ranked = _ranked(hits)
    for i, hit in enumerate(ranked):
        tp += gt.is_relevant(hit)
        fp += not gt.is_relevant(hit)
        if i + 1 < len(ranked) and ranked[i + 1].score == hit.score:
            continue
        f1 = 2 * tp / (2 * tp + fp + (total - tp)) if total + fp else 0.0
        if f1 > best_f1:
            best_theta, best_f1 = hit.score, f1
    return best_theta


def fit_global_threshold(hits: Sequence[SpotHit], gt: GroundTruth) -> float:
    """Single threshold maximizing F1 over all keywords (ties keep the higher threshold)."""
    theta = _best_f1_threshold(hits, gt)
    logger.info(f"fitted global threshold {theta:.4f}")
    return theta


def fit_local_thresholds(hits: Sequence[SpotHit], gt: GroundTruth, fallback: float | None = None) -> LocalThreshold:
    by_keyword: dict[str, list[SpotHit]] = defaultdict(list)
    for hit in hits:
        by_keyword[hit.keyword].append(hit)
    per_keyword = {k: _best_f1_threshold(v, gt) for k, v in sorted(by_keyword.items())}
    if fallback is None:
        fallback = fit_global_threshold(hits, gt)
    return LocalThreshold(per_keyword, fallback)


# ---------------------------------
# DTW baseline
# ---------------------------------
@dataclass(frozen=True)
class DtwParams:
    band_radius: int | None = None

    def __post_init__(self):
        if self.band_radius is not None and self.band_radius < 0:
            raise ValueError("band radius must be >= 0")


def _as_matrix(seq) -> np.ndarray:
    if isinstance(seq, (list, tuple)) and seq and np.ndim(seq[0]) == 1:
        return np.stack([np.asarray(ch, dtype=np.float64) for ch in seq], axis=1)
    arr = np.asarray(seq, dtype=np.float64)
    return arr[:, None] if arr.ndim == 1 else arr


def dtw_align(seq_a, seq_b, p: DtwParams = DtwParams()) -> tuple[float, int]:
    """Accumulated cost and warping-path length; ties prefer the diagonal step, then (-1, 0)."""
    a, b = _as_matrix(seq_a), _as_matrix(seq_b)
    n, m = a.shape[0], b.shape[0]
    if n == 0 or m == 0:
        raise EmptyImage("DTW needs non-empty sequences")
    r = p.band_radius
    if r is not None and abs(n - m) > r:
        raise BandTooNarrow(f"band radius {r} cannot connect lengths {n} and {m}")
    cost = cdist(a, b, metric="cityblock")
    acc = np.full((n, m), np.inf)
    steps = np.zeros((n, m), dtype=np.int64)
    for i in range(n):
        lo, hi = (0, m) if r is None else (max(0, i - r), min(m, i + r + 1))
        for j in range(lo, hi):
            if i == 0 and j == 0:
                acc[i, j], steps[i, j] = cost[0, 0], 1
                continue
            options = (
                (acc[i - 1, j - 1], steps[i - 1, j - 1]) if i and j else (np.inf, 0),
                (acc[i - 1, j], steps[i - 1, j]) if i else (np.inf, 0),
                (acc[i, j - 1], steps[i, j - 1]) if j else (np.inf, 0),
            )
            best, length = min(options, key=lambda o: o[0])
            acc[i, j] = cost[i, j] + best
            steps[i, j] = length + 1
    return float(acc[n - 1, m - 1]), int(steps[n - 1, m - 1])


def dtw_distance(seq_a, seq_b, p: DtwParams = DtwParams()) -> float:
    return dtw_align(seq_a, seq_b, p)[0]


def dtw_baseline_rank(
    query: RasterImage, candidates: Sequence[tuple[str, RasterImage]], p: DtwParams = DtwParams()
) -> list[tuple[str, float]]:
    """Candidates sorted by path-normalized DTW distance, then id."""
    q = dtw_profile_features(query)
    scored = []
    for cid, img in candidates:
        c = dtw_profile_features(img)
        n, m = q[0].shape[0], c[0].shape[0]
        radius = p.band_radius
        if radius is not None and abs(n - m) > radius:
            logger.debug(f"{cid}: band radius widened from {radius} to {abs(n - m)} for lengths {n} and {m}")
            radius = abs(n - m)
        distance, length = dtw_align(q, c, DtwParams(radius))
        scored.append((cid, distance / length))
    return sorted(scored, key=lambda item: (item[1], item[0]))


def split_words(line_img: RasterImage, min_gap: int, min_width: int = 1) -> list[tuple[int, int]]:
    """Column ranges [x0, x1) of ink separated by blank runs of at least ``min_gap`` columns; narrower runs are dropped."""
    inked = np.flatnonzero(line_img.ink.any(axis=0))
    if inked.size == 0:
        return []
    words = []
    start = prev = int(inked[0])
    for x in inked[1:]:
        if x - prev - 1 >= min_gap:
            words.append((start, prev + 1))
            start = int(x)
        prev = int(x)
    words.append((start, prev + 1))
    return [(x0, x1) for x0, x1 in words if x1 - x0 >= min_width]


def crop_word(line_img: RasterImage, span: tuple[int, int]) -> RasterImage:
    """Word columns cropped to the rows holding their ink."""
    block = line_img.pixels[:, span[0]:span[1]]
    rows = np.flatnonzero(block.any(axis=1))
    return RasterImage(block[rows[0]:rows[-1] + 1].copy(), line_img.depth)
