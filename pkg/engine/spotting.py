"""
Keyword spotting: keyword-vs-filler line scoring, thresholding and
modifier-count re-ranking of middle-zone hits.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Literal, Sequence

import numpy as np

from engine.errors import OutOfVocabulary, TooShort, ZoneSpotError
from engine.features import FeatureKind, FeatureMode, FeatureSequence, PhogParams, WindowSpec, extract_line_features
from engine.lexmap import KeywordQuery
from engine.raster import RasterImage, rlsa_horizontal
from engine.seqmodel import ModelSet, SpottingNetwork, build_filler, build_keyword_network, span_log_likelihood, viterbi
from engine.zones import MiddleZone, ZoneBoundaries, extract_middle_zone

logger = logging.getLogger(__name__)

KEYWORD_TAG = "keyword"
RERANK_SKIPPED = "RerankSkipped"
THRESHOLD_FALLBACK = "ThresholdFallback"


@dataclass(frozen=True)
class SpotHit:
    line_id: str
    keyword: str
    a: int
    b: int  # exclusive
    L_s: int
    L_f: int
    score: float
    kept: bool = True
    expected_upper: int = 0
    expected_lower: int = 0
    n_upper: int | None = None
    n_lower: int | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"hit span must satisfy a < b, got [{self.a}, {self.b})")
        if not math.isfinite(self.score):
            raise ValueError("hit score must be finite")

    def flagged(self, flag: str) -> "SpotHit":
        return self if flag in self.flags else replace(self, flags=self.flags + (flag,))


def rank_hits(hits: Iterable[SpotHit]) -> list[SpotHit]:
    return sorted(hits, key=lambda h: (-h.score, h.line_id, h.keyword))


# ---------------------------------
# Scoring
# ---------------------------------
def score_line(
    X: FeatureSequence,
    keyword_net: SpottingNetwork,
    filler_net: SpottingNetwork,
    line_id: str = "",
    query: KeywordQuery | None = None,
    spec: WindowSpec = WindowSpec(),
    emissions: np.ndarray | None = None,
) -> SpotHit:
    """
    Score = [log p(X_ab | K) - log p(X_ab | F)] / (b - a).

    (a, b) is the keyword span of the best keyword-network path; the filler
    term is a Viterbi pass of the filler alone over the same frames.
    """
    if keyword_net.models is not filler_net.models:
        raise ValueError("keyword and filler networks must share one model set")
    if emissions is None:
        emissions = keyword_net.models.emissions(X)
    alignment = viterbi(keyword_net, X, emissions)
    a, b = alignment.span(KEYWORD_TAG)
    keyword_ll = span_log_likelihood(keyword_net, alignment, KEYWORD_TAG, X, emissions)
    filler_ll = viterbi(filler_net, X.slice(a, b), emissions[a:b]).log_likelihood
    score = (keyword_ll - filler_ll) / (b - a)
    start, end = spec.column_span(a, b)
    L_s = int(math.floor(start / X.scale))
    L_f = max(L_s + 1, int(math.ceil(end / X.scale)))
    keyword = query.raw_text if query else "".join(n.label for n in keyword_net.nodes if n.tag == KEYWORD_TAG)
    return SpotHit(
        line_id=line_id,
        keyword=keyword,
        a=a,
        b=b,
        L_s=L_s,
        L_f=L_f,
        score=float(score),
        expected_upper=query.upper_modifiers if query else 0,
        expected_lower=query.lower_modifiers if query else 0,
    )


class KeywordSpotter:
    """Caches keyword networks per query and the emission table per line."""

    def __init__(self, models: ModelSet, spec: WindowSpec = WindowSpec()):
        self.models = models
        self.spec = spec
        self.filler = build_filler(models)
        self._networks: dict[tuple[str, ...], SpottingNetwork] = {}

    def supports(self, query: KeywordQuery) -> bool:
        return all(symbol in self.models for symbol in query.middle_transcription)

    def network(self, query: KeywordQuery) -> SpottingNetwork:
        key = tuple(query.middle_transcription)
        if key not in self._networks:
            self._networks[key] = build_keyword_network(key, self.models, KEYWORD_TAG)
        return self._networks[key]

    def spot_line(self, line_id: str, X: FeatureSequence, queries: Sequence[KeywordQuery]) -> list[SpotHit]:
        emissions = self.models.emissions(X)
        hits = []
        for query in queries:
            try:
                hits.append(score_line(X, self.network(query), self.filler, line_id, query, self.spec, emissions))
            except TooShort as e:
                logger.warning(f"{line_id}: {query.raw_text!r} skipped, {e}")
            except OutOfVocabulary as e:
                logger.warning(f"{line_id}: {query.raw_text!r} skipped, {e}")
        return hits


def line_observation(
    img: RasterImage,
    spec: WindowSpec = WindowSpec(),
    p: PhogParams = PhogParams(),
    mode: FeatureMode = "fg+bg",
    kind: FeatureKind = "phog",
    middle: MiddleZone | None = None,
) -> FeatureSequence:
    """Full-line features, or middle-band features (with clipped reservoirs) when ``middle`` is given."""
    if middle is None:
        return extract_line_features(img, spec, p, mode, kind)
    band, reservoirs = middle.band()
    return extract_line_features(band, spec, p, mode, kind, background=reservoirs)


# ---------------------------------
# Thresholds
# ---------------------------------
@dataclass(frozen=True)
class GlobalThreshold:
    theta: float

    def resolve(self, keyword: str) -> tuple[float, bool]:
        return self.theta, False


@dataclass(frozen=True)
class LocalThreshold:
    per_keyword: dict[str, float]
    fallback: float

    def resolve(self, keyword: str) -> tuple[float, bool]:
        if keyword in self.per_keyword:
            return self.per_keyword[keyword], False
        return self.fallback, True


ThresholdPolicy = GlobalThreshold | LocalThreshold


def apply_threshold(hits: Iterable[SpotHit], policy: ThresholdPolicy) -> list[SpotHit]:
    """Hits with score >= theta; unseen keywords under a local policy use the global value and are flagged."""
    kept = []
    for hit in hits:
        theta, fell_back = policy.resolve(hit.keyword)
        if hit.score >= theta:
            kept.append(hit.flagged(THRESHOLD_FALLBACK) if fell_back else hit)
    return kept


# ---------------------------------
# Modifier re-ranking
# ---------------------------------
def count_projection_peaks(projection: Sequence[float], min_area: float = 0) -> int:
    """Maximal runs of non-zero projection; a valley only separates peaks when it reaches zero."""
    count = 0
    area = 0.0
    for value in list(projection) + [0]:
        if value > 0:
            area += value
        elif area > 0:
            count += area >= min_area
            area = 0.0
    return int(count)


def count_modifier_peaks(zone_img: RasterImage, line_height: int, min_peak_area: int = 0) -> int:
    """Number of modifiers in an upper/lower zone image after RLSA with t = H_L/4."""
    if not zone_img.has_ink():
        return 0
    smoothed = rlsa_horizontal(zone_img, int(round(line_height / 4)))
    return count_projection_peaks(smoothed.pixels.sum(axis=0), min_peak_area)


def rerank(
    hit: SpotHit,
    zb: ZoneBoundaries,
    line_img: RasterImage,
    line_height: int,
    min_peak_area: int = 0,
) -> SpotHit:
    """
    Keep a hit only when the modifier counts over its span match the
    keyword's expected counts. A hit that is already dropped stays dropped;
    any extraction failure keeps the hit and flags it.
    """
    if not hit.kept:
        return hit
    try:
        zone = extract_middle_zone(line_img, zb).cropped(hit.L_s, hit.L_f)
        n_upper = count_modifier_peaks(zone.upper, line_height, min_peak_area)
        n_lower = count_modifier_peaks(zone.lower, line_height, min_peak_area)
    except (ZoneSpotError, ValueError) as e:
        logger.warning(f"{hit.line_id}: re-ranking skipped for {hit.keyword!r}, {e}")
        return hit.flagged(RERANK_SKIPPED)
    kept = n_upper == hit.expected_upper and n_lower == hit.expected_lower
    return replace(hit, kept=kept, n_upper=n_upper, n_lower=n_lower)


def spotting_mode_label(mode: Literal["full", "middle"], features: FeatureMode, reranked: bool) -> str:
    label = f"{mode}-line {features}" if mode == "full" else f"middle-zone {features}"
    return label + (" + rerank" if reranked else "")
