import functools
import logging

import numpy as np
import pytest

from engine.errors import BandTooNarrow, EvaluationError
from engine.evaluation import (
    DtwParams,
    GroundTruth,
    average_precision,
    check_line_coverage,
    crop_word,
    curve_area,
    dtw_align,
    dtw_baseline_rank,
    dtw_distance,
    eliminated_true_positives,
    evaluate,
    fit_global_threshold,
    fit_local_thresholds,
    length_breakdown,
    mean_average_precision,
    pr_curve,
    precision_at_recall,
    split_words,
)
from engine.raster import RasterImage
from engine.spotting import SpotHit
from utils.formats import format_curve, format_report, parse_curve

GT = GroundTruth.from_transcriptions({"l1": "ab c", "l2": "c", "l3": "ab"}, ["ab", "c", "zz"])


def hit(line_id: str, keyword: str, score: float, kept: bool = True) -> SpotHit:
    return SpotHit(line_id, keyword, 0, 1, 0, 6, score, kept)


AB_HITS = [hit("l1", "ab", 0.9), hit("l2", "ab", 0.8), hit("l3", "ab", 0.7)]
C_HITS = [hit("l2", "c", 0.9), hit("l3", "c", 0.5)]


def test_ground_truth_relevance():
    assert GT.relevant("ab") == {"l1", "l3"}
    assert GT.relevant("zz") == set()
    assert GT.is_relevant(hit("l1", "c", 0.1))


def test_average_precision_example():
    assert average_precision([True, False, True], 2) == pytest.approx(0.8333, abs=1e-4)
    assert average_precision([False, True], 2) == pytest.approx(0.25)
    with pytest.raises(EvaluationError):
        average_precision([True], 0)


def test_pr_curve_one_point_per_threshold():
    curve = pr_curve(AB_HITS, GT)
    assert [(p.threshold, p.tp, p.fp, p.fn) for p in curve] == [(0.9, 1, 0, 1), (0.8, 1, 1, 1), (0.7, 2, 1, 0)]
    assert [p.precision for p in curve] == pytest.approx([1.0, 0.5, 2 / 3])
    assert [p.recall for p in curve] == pytest.approx([0.5, 0.5, 1.0])
    assert curve_area(curve) == pytest.approx(0.8333, abs=1e-4)
    assert precision_at_recall(curve, 0.6) == pytest.approx(2 / 3)


def test_tied_scores_share_a_curve_point():
    curve = pr_curve([hit("l1", "ab", 0.5), hit("l2", "ab", 0.5)], GT)
    assert len(curve) == 1
    assert (curve[0].tp, curve[0].fp) == (1, 1)


def test_dropped_hits_do_not_count():
    curve = pr_curve([hit("l1", "ab", 0.9), hit("l2", "ab", 0.8, kept=False)], GT)
    assert len(curve) == 1 and curve[0].precision == 1.0


def test_mean_average_precision_matches_hand_computation():
    mean_ap, per_keyword, excluded = mean_average_precision(AB_HITS + C_HITS + [hit("l1", "zz", 0.3)], GT)
    assert per_keyword == pytest.approx({"ab": 5 / 6, "c": 0.5})
    assert mean_ap == pytest.approx((5 / 6 + 0.5) / 2)
    assert excluded == ["zz"]


def test_missing_relevant_lines_count_as_misses():
    _, per_keyword, _ = mean_average_precision([hit("l1", "ab", 0.9)], GT)
    assert per_keyword["ab"] == pytest.approx(0.5)


def test_map_needs_a_relevant_keyword():
    with pytest.raises(EvaluationError):
        mean_average_precision([hit("l1", "zz", 0.3)], GT)


def test_evaluate_rejects_unknown_lines():
    with pytest.raises(EvaluationError):
        evaluate([hit("l9", "ab", 0.3)], GT)


def test_evaluation_report():
    report = evaluate(AB_HITS + C_HITS, GT)
    assert report.by_length == pytest.approx({1: 0.5, 2: 5 / 6})
    text = format_report(report)
    assert text.splitlines()[0] == "keyword\taverage_precision"
    assert text.splitlines()[-1] == f"MAP\t{report.mean_ap:.6f}"
    assert len(parse_curve(format_curve(report.curve))) == len(report.curve)


def test_length_breakdown():
    assert length_breakdown({"ab": 0.8, "c": 0.5, "de": 0.4}) == pytest.approx({1: 0.5, 2: 0.6})


def test_global_threshold_maximizes_f1():
    assert fit_global_threshold(AB_HITS, GT) == 0.7


def test_local_thresholds_per_keyword():
    policy = fit_local_thresholds(AB_HITS + C_HITS, GT)
    assert policy.per_keyword == {"ab": 0.7, "c": 0.9}
    assert policy.resolve("zz") == (policy.fallback, True)


def test_dtw_example():
    assert dtw_align([1, 2, 3], [1, 3]) == (1.0, 3)


def recursive_dtw(a: list[float], b: list[float]) -> float:
    @functools.lru_cache(maxsize=None)
    def acc(i: int, j: int) -> float:
        cost = abs(a[i] - b[j])
        if i == 0 and j == 0:
            return cost
        previous = []
        if i and j:
            previous.append(acc(i - 1, j - 1))
        if i:
            previous.append(acc(i - 1, j))
        if j:
            previous.append(acc(i, j - 1))
        return cost + min(previous)

    return acc(len(a) - 1, len(b) - 1)


@pytest.mark.parametrize("seed", range(100))
def test_dtw_matches_recursive_definition(seed):
    rng = np.random.default_rng(seed)
    a = rng.random(int(rng.integers(1, 9))).tolist()
    b = rng.random(int(rng.integers(1, 9))).tolist()
    unbanded = dtw_distance(a, b)
    assert unbanded == pytest.approx(recursive_dtw(a, b))
    assert dtw_distance(b, a) == pytest.approx(unbanded)
    assert dtw_distance(a, b, DtwParams(max(len(a), len(b)))) == unbanded
    assert dtw_distance(a, a) == 0.0


def test_wide_band_matches_unbanded():
    rng = np.random.default_rng(6)
    a, b = rng.random((12, 3)), rng.random((9, 3))
    assert dtw_distance(a, b, DtwParams(12)) == pytest.approx(dtw_distance(a, b))
    assert dtw_distance(a, b, DtwParams(3)) >= dtw_distance(a, b)


def test_band_too_narrow():
    with pytest.raises(BandTooNarrow):
        dtw_align([1, 2, 3, 4], [1], DtwParams(1))


def test_multichannel_profiles():
    channels = [np.array([0.0, 1.0, 0.0]), np.array([1.0, 1.0, 0.0])]
    assert dtw_distance(channels, channels) == 0.0


def word_line() -> RasterImage:
    ink = np.zeros((12, 30), dtype=bool)
    ink[3:9, 0:3] = True
    ink[4:7, 5:8] = True
    ink[2:10, 20:23] = True
    return RasterImage.binary(ink)


def test_split_words_on_wide_gaps():
    img = word_line()
    assert split_words(img, min_gap=5) == [(0, 8), (20, 23)]
    assert split_words(img, min_gap=2) == [(0, 3), (5, 8), (20, 23)]
    assert split_words(img, min_gap=5, min_width=4) == [(0, 8)]


def test_crop_word_trims_blank_rows():
    word = crop_word(word_line(), (20, 23))
    assert (word.height, word.width) == (8, 3)


def test_dtw_baseline_ranks_identical_word_first():
    img = word_line()
    query = crop_word(img, (0, 8))
    candidates = [("tall", crop_word(img, (20, 23))), ("same", crop_word(img, (0, 8)))]
    ranked = dtw_baseline_rank(query, candidates, DtwParams(2))
    assert ranked[0] == ("same", 0.0)


def test_eliminated_true_positives_ignore_false_positives():
    before = [hit("l1", "ab", 0.9), hit("l2", "ab", 0.8), hit("l3", "ab", 0.7), hit("l3", "c", 0.5, kept=False)]
    after = [hit("l1", "ab", 0.9), hit("l2", "ab", 0.8, kept=False), hit("l3", "ab", 0.7, kept=False), hit("l3", "c", 0.5, kept=False)]
    assert eliminated_true_positives(before, after, GT) == [("l3", "ab")]
    assert eliminated_true_positives(before, before, GT) == []


def brute_force_ap(scores: list[float], relevance: list[bool], n_relevant: int) -> float:
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    total = 0.0
    for k in range(1, len(order) + 1):
        if relevance[order[k - 1]]:
            total += sum(relevance[i] for i in order[:k]) / k
    return total / n_relevant


@pytest.mark.parametrize("seed", range(200))
def test_mean_average_precision_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    keywords = ["ka", "kb", "kc"]
    texts = {f"l{i}": " ".join(k for k in keywords if rng.random() < 0.4) or "other" for i in range(int(rng.integers(2, 9)))}
    gt = GroundTruth.from_transcriptions(texts, keywords)
    hits = [
        hit(line_id, keyword, float(rng.random()), kept=bool(rng.random() < 0.9))
        for keyword in keywords
        for line_id in texts
        if rng.random() < 0.8
    ]
    expected = {}
    for keyword in keywords:
        relevant = gt.relevant(keyword)
        if not relevant or not any(h.keyword == keyword for h in hits):
            continue
        kept = [h for h in hits if h.keyword == keyword and h.kept]
        expected[keyword] = brute_force_ap([h.score for h in kept], [h.line_id in relevant for h in kept], len(relevant))
    if not expected:
        with pytest.raises(EvaluationError):
            mean_average_precision(hits, gt)
        return
    mean_ap, per_keyword, _ = mean_average_precision(hits, gt)
    assert per_keyword == pytest.approx(expected)
    assert mean_ap == pytest.approx(sum(expected.values()) / len(expected))


def test_dtw_baseline_logs_a_widened_band(caplog):
    caplog.set_level(logging.DEBUG, logger="engine.evaluation")
    img = word_line()
    ranked = dtw_baseline_rank(crop_word(img, (0, 8)), [("tall", crop_word(img, (20, 23)))], DtwParams(2))
    assert [cid for cid, _ in ranked] == ["tall"]
    assert "band radius widened from 2 to 5" in caplog.text


def test_line_coverage_in_both_directions():
    check_line_coverage(AB_HITS, GT)
    with pytest.raises(EvaluationError, match="l3"):
        check_line_coverage(AB_HITS[:2], GT)
    with pytest.raises(EvaluationError, match="l9"):
        check_line_coverage(AB_HITS + [hit("l9", "ab", 0.1)], GT)
