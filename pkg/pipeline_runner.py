"""
Orchestration behind every CLI verb.

Each ``cmd_*`` function takes already-parsed arguments plus the validated
Settings, does its work through the engine modules and returns a small
summary object that app.py prints.
"""

import csv
import filecmp
import logging
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from engine.errors import ManifestError, OutOfVocabulary, TrainingError, ZoneSpotError
from engine.evaluation import (
    DtwParams,
    EvalReport,
    check_line_coverage,
    GroundTruth,
    crop_word,
    dtw_baseline_rank,
    eliminated_true_positives,
    evaluate,
    fit_global_threshold,
    fit_local_thresholds,
    precision_at_recall,
    split_words,
)
from engine.features import FeatureMode, FeatureSequence
from engine.lexmap import KeywordQuery, ZoneRuleTable, full_form_query, load_rule_table, map_keyword, split_graphemes
from engine.raster import RasterImage, binarize, deskew, deslant, estimate_skew
from engine.seqmodel import (
    SPACE,
    IterationLog,
    ModelSet,
    TrainingLine,
    embedded_baum_welch,
    flat_start,
    line_symbols,
)
from engine.spotting import (
    GlobalThreshold,
    KeywordSpotter,
    SpotHit,
    ThresholdPolicy,
    apply_threshold,
    line_observation,
    rank_hits,
    rerank,
    spotting_mode_label,
)
from engine.synth import SynthConfig, SynthCorpus, generate_corpus
from engine.zones import (
    MiddleZone,
    ZoneBoundaries,
    ZoneParams,
    estimate_line_height,
    extract_middle_zone,
    load_zone_boundaries,
    projection_zone_baseline,
    save_zone_boundaries,
    segment_zones,
    train_zone_hmm,
    zone_boundary_error,
    zone_training_lines,
)
from utils.config_loader import Settings
from utils.formats import format_curve, format_report, load_features, load_hits, load_models, save_features, save_hits, save_models
from utils.image_io import load_image
from utils.manifest_loader import ManifestRecord, load_manifest, transcriptions
from utils.plots import save_pr_chart

logger = logging.getLogger(__name__)

SpotMode = Literal["full", "middle"]
ZoneSource = Literal["gt", "hmm", "global", "local"]


# ---------------------------------
# Line preparation
# ---------------------------------
def load_line(record: ManifestRecord, settings: Settings) -> RasterImage:
    """Binarized line image, optionally deskewed / deslanted."""
    img = binarize(load_image(record.image_path))
    if settings.deskew and img.has_ink():
        try:
            img = deskew(img, estimate_skew(img).delta)
        except ZoneSpotError as e:
            logger.debug(f"{record.line_id}: deskew skipped, {e}")
    if settings.deslant:
        img = deslant(img)
    return img


def line_zones(
    record: ManifestRecord,
    img: RasterImage,
    source: ZoneSource,
    settings: Settings,
    zone_models: ModelSet | None = None,
    zones_dir: Path | None = None,
) -> ZoneBoundaries:
    """Zone boundaries for one line from ground truth, a boundary directory, the zone HMMs or the projection baseline."""
    if zones_dir is not None:
        return load_zone_boundaries(zones_dir / f"{record.line_id}.tsv", img.height)
    if source == "gt":
        if record.zones_path is None:
            raise ManifestError(f"line {record.line_id!r} has no zone ground truth")
        return load_zone_boundaries(record.zones_path, img.height)
    if source == "hmm":
        if zone_models is None:
            raise ZoneSpotError("HMM zone segmentation needs a zone model file")
        return segment_zones(
            img,
            zone_models,
            settings.zone_alpha,
            settings.zone_patch_width,
            settings.zone_patch_height,
            settings.zone_v_step,
            settings.phog,
        ).boundaries
    return projection_zone_baseline(img, source)


def observation(
    record: ManifestRecord,
    img: RasterImage,
    settings: Settings,
    features: FeatureMode,
    middle: MiddleZone | None = None,
) -> FeatureSequence:
    """Line features, read from / written to the feature cache when one is configured."""
    source_height = middle.bottom - middle.top + 1 if middle else img.height
    scale = settings.window_height / source_height
    cache = Path(settings.feature_cache_dir) if settings.feature_cache_dir else None
    tag = f"{'middle' if middle else 'full'}.{features.replace('+', '')}.{settings.feature_kind}"
    if cache is not None:
        path = cache / f"{record.line_id}.{tag}.zsft"
        if path.exists():
            return load_features(path, scale=scale)
    X = line_observation(img, settings.window, settings.phog, features, settings.feature_kind, middle)
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        save_features(X, path)
    return X


def load_keywords(path: str | Path) -> list[str]:
    words = [w.strip() for w in Path(path).read_text(encoding="utf-8").splitlines()]
    return [w for w in words if w and not w.startswith("#")]


def word_symbols(word: str, mode: SpotMode, table: ZoneRuleTable | None) -> list[str]:
    if mode == "middle":
        return list(map_keyword(word, table).middle_transcription)
    return split_graphemes(word)


# ---------------------------------
# Synth
# ---------------------------------
def cmd_synth(cfg: SynthConfig, out_dir: str | Path) -> SynthCorpus:
    corpus = generate_corpus(cfg, out_dir)
    print(f"✅ Synthetic corpus written to {corpus.root} ({len(corpus.lexicon.keywords)} keywords)")
    return corpus


# ---------------------------------
# Training
# ---------------------------------
def write_training_log(history: Sequence[IterationLog], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["iteration", "mixtures", "loglik", "frames", "skipped"])
        for entry in history:
            writer.writerow([entry.iteration, entry.mixtures, f"{entry.loglik:.17g}", entry.frames, entry.skipped])


@dataclass
class TrainSummary:
    models: ModelSet
    history: list[IterationLog]
    lines: int
    model_path: Path


def char_training_lines(
    records: Sequence[ManifestRecord],
    settings: Settings,
    mode: SpotMode,
    features: FeatureMode,
    table: ZoneRuleTable | None,
    zone_source: ZoneSource = "gt",
    zone_models: ModelSet | None = None,
) -> list[TrainingLine]:
    """Feature sequence plus space-delimited symbol string for every manifest line."""
    lines = []
    offending = []
    for record in records:
        try:
            symbols = line_symbols([word_symbols(w, mode, table) for w in record.words])
        except ZoneSpotError as e:
            offending.append(f"{record.line_id} ({e})")
            continue
        if table is not None and mode == "full":
            unknown = [s for s in symbols if s != SPACE and s not in table.rules]
            if unknown:
                offending.append(f"{record.line_id} ({', '.join(sorted(set(unknown)))})")
                continue
        img = load_line(record, settings)
        middle = None
        if mode == "middle":
            middle = extract_middle_zone(img, line_zones(record, img, zone_source, settings, zone_models))
        lines.append(TrainingLine(observation(record, img, settings, features, middle), symbols, record.line_id))
    if offending:
        raise TrainingError("transcriptions outside the charset: " + "; ".join(offending))
    return lines


def transcription_graphemes(records: Sequence[ManifestRecord]) -> set[str]:
    return {g for record in records for word in record.words for g in split_graphemes(word)}


def cmd_train_chars(
    manifest: str | Path,
    settings: Settings,
    out_model: str | Path,
    mode: SpotMode = "full",
    features: FeatureMode = "fg+bg",
    rules: str | Path | None = None,
    zone_source: ZoneSource = "gt",
    zone_model_path: str | Path | None = None,
    log_path: str | Path | None = None,
) -> TrainSummary:
    """Flat start, then embedded Baum-Welch with mixture splitting up to MAX_MIXTURES."""
    records = load_manifest(manifest)
    table = load_rule_table(rules) if rules else None
    if table is not None:
        table.validate(transcription_graphemes(records), table.middle_charset)
    if mode == "middle" and table is None:
        raise TrainingError("middle-zone training needs a rule table")
    zone_models = load_models(zone_model_path) if zone_model_path else None
    lines = char_training_lines(records, settings, mode, features, table, zone_source, zone_models)
    if mode == "middle":
        charset = table.middle_charset
    elif table is not None:
        charset = sorted(table.rules)
    else:
        charset = sorted({s for line in lines for s in line.symbols} - {SPACE})
    models = flat_start(
        lines,
        [SPACE, *charset],
        n_states=settings.char_states,
        var_floor_scale=settings.var_floor_scale,
        min_var=settings.var_floor_min,
    )
    result = embedded_baum_welch(models, lines, settings.em_iterations, settings.char_schedule)
    out_model = Path(out_model)
    save_models(result.models, out_model)
    write_training_log(result.history, log_path or out_model.with_suffix(".log.csv"))
    print(f"✅ Trained {len(charset)} character models + Space on {len(lines)} lines → {out_model}")
    return TrainSummary(result.models, result.history, len(lines), out_model)


def cmd_train_zones(
    manifest: str | Path,
    settings: Settings,
    out_model: str | Path,
    log_path: str | Path | None = None,
) -> TrainSummary:
    """Zone HMMs trained on vertical patch sequences labelled from ground-truth zone rows."""
    records = load_manifest(manifest, require_zones=True)
    lines: list[TrainingLine] = []
    for record in records:
        img = load_line(record, settings)
        truth = load_zone_boundaries(record.zones_path, img.height)
        zp = ZoneParams(
            estimate_line_height(img).value,
            settings.zone_alpha,
            settings.zone_patch_width,
            settings.zone_patch_height,
            settings.zone_v_step,
        )
        lines.extend(zone_training_lines(img, truth, zp, settings.phog, record.line_id))
    result = train_zone_hmm(
        lines,
        n_states=settings.zone_states,
        iterations=settings.zone_iterations,
        mixup_schedule=settings.zone_schedule,
        var_floor_scale=settings.var_floor_scale,
    )
    out_model = Path(out_model)
    save_models(result.models, out_model)
    write_training_log(result.history, log_path or out_model.with_suffix(".log.csv"))
    print(f"✅ Trained 4 zone models on {len(lines)} strips → {out_model}")
    return TrainSummary(result.models, result.history, len(lines), out_model)


# ---------------------------------
# Zone segmentation
# ---------------------------------
@dataclass
class SegmentSummary:
    lines: int
    mean_error: float | None
    errors: dict[str, float] = field(default_factory=dict)


def cmd_segment_zones(
    manifest: str | Path,
    settings: Settings,
    out_dir: str | Path,
    zone_model_path: str | Path | None = None,
    baseline: Literal["global", "local"] | None = None,
) -> SegmentSummary:
    """Boundary file per line; reports mean boundary error where ground truth exists."""
    records = load_manifest(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    zone_models = load_models(zone_model_path) if zone_model_path else None
    source: ZoneSource = baseline or "hmm"
    errors = {}
    for record in records:
        img = load_line(record, settings)
        zb = line_zones(record, img, source, settings, zone_models)
        save_zone_boundaries(zb, out_dir / f"{record.line_id}.tsv")
        if record.zones_path is not None:
            errors[record.line_id] = zone_boundary_error(zb, load_zone_boundaries(record.zones_path, img.height))
    mean_error = float(np.mean(list(errors.values()))) if errors else None
    if mean_error is not None:
        print(f"✅ Segmented {len(records)} lines ({source}); mean boundary error {mean_error:.2f} px")
    else:
        print(f"✅ Segmented {len(records)} lines ({source})")
    return SegmentSummary(len(records), mean_error, errors)


# ---------------------------------
# Spotting
# ---------------------------------
def resolve_queries(keywords: Sequence[str], models: ModelSet, mode: SpotMode, table: ZoneRuleTable | None) -> list[KeywordQuery]:
    """Map keywords to queries; unmappable or out-of-vocabulary keywords are logged and skipped."""
    queries = []
    for keyword in keywords:
        try:
            query = map_keyword(keyword, table) if mode == "middle" else full_form_query(keyword)
        except ZoneSpotError as e:
            logger.warning(f"keyword {keyword!r} skipped: {e}")
            continue
        missing = [s for s in query.middle_transcription if s not in models or s == SPACE]
        if missing:
            logger.warning(f"keyword {keyword!r} skipped: {OutOfVocabulary(missing[0])}")
            continue
        queries.append(query)
    return queries


@dataclass
class SpotRun:
    hits: list[SpotHit]
    skipped_keywords: int
    lines: int


def spot_lines(
    records: Sequence[ManifestRecord],
    models: ModelSet,
    queries: Sequence[KeywordQuery],
    settings: Settings,
    mode: SpotMode,
    features: FeatureMode,
    zone_source: ZoneSource = "hmm",
    zone_models: ModelSet | None = None,
    zones_dir: Path | None = None,
    do_rerank: bool = False,
) -> list[SpotHit]:
    spotter = KeywordSpotter(models, settings.window)
    hits: list[SpotHit] = []
    for record in records:
        img = load_line(record, settings)
        middle = None
        zb = None
        if mode == "middle" or do_rerank:
            zb = line_zones(record, img, zone_source, settings, zone_models, zones_dir)
            middle = extract_middle_zone(img, zb) if mode == "middle" else None
        try:
            X = observation(record, img, settings, features, middle)
        except ZoneSpotError as e:
            logger.warning(f"{record.line_id}: no features, {e}")
            continue
        line_hits = spotter.spot_line(record.line_id, X, queries)
        if do_rerank and zb is not None:
            height = estimate_line_height(img).value
            line_hits = [rerank(h, zb, img, height, settings.rerank_min_peak_area) for h in line_hits]
        hits.extend(line_hits)
    return hits


def threshold_policy(
    settings: Settings,
    validation_hits: Sequence[SpotHit] | None,
    validation_gt: GroundTruth | None,
) -> ThresholdPolicy:
    if settings.threshold_policy == "none":
        return GlobalThreshold(-np.inf)
    if validation_hits is None:
        if settings.threshold_policy == "local":
            raise ZoneSpotError("a local threshold policy needs a validation manifest to fit on")
        return GlobalThreshold(settings.threshold)
    if settings.threshold_policy == "local":
        return fit_local_thresholds(validation_hits, validation_gt, settings.threshold)
    return GlobalThreshold(fit_global_threshold(validation_hits, validation_gt))


def mark_threshold(hits: Sequence[SpotHit], policy: ThresholdPolicy) -> list[SpotHit]:
    """Hits below their threshold stay in the list with kept = False."""
    passing = {(h.line_id, h.keyword): h for h in apply_threshold(hits, policy)}
    return [passing.get((h.line_id, h.keyword), replace(h, kept=False)) for h in hits]


def cmd_spot(
    manifest: str | Path,
    settings: Settings,
    model_path: str | Path,
    keywords_path: str | Path,
    out_hits: str | Path,
    mode: SpotMode = "full",
    features: FeatureMode = "fg+bg",
    rules: str | Path | None = None,
    zone_source: ZoneSource = "hmm",
    zone_model_path: str | Path | None = None,
    zones_dir: str | Path | None = None,
    do_rerank: bool = False,
    validation_manifest: str | Path | None = None,
) -> SpotRun:
    """Ranked hit list for every (keyword, line) pair of the manifest."""
    records = load_manifest(manifest)
    models = load_models(model_path)
    table = load_rule_table(rules) if rules else None
    if do_rerank and mode != "middle":
        raise ZoneSpotError("re-ranking applies to middle-zone spotting only")
    if mode == "middle" and table is None:
        raise ZoneSpotError("middle-zone spotting needs a rule table")
    if mode == "middle":
        table.validate((), models.charset)
    zone_models = load_models(zone_model_path) if zone_model_path else None
    zones_dir = Path(zones_dir) if zones_dir else None
    keywords = load_keywords(keywords_path)
    queries = resolve_queries(keywords, models, mode, table)

    validation_hits = validation_gt = None
    if validation_manifest and settings.threshold_policy != "none":
        val_records = load_manifest(validation_manifest)
        validation_hits = spot_lines(val_records, models, queries, settings, mode, features, zone_source, zone_models, None, do_rerank)
        validation_gt = GroundTruth.from_transcriptions(transcriptions(val_records), keywords)
    policy = threshold_policy(settings, validation_hits, validation_gt)

    hits = spot_lines(records, models, queries, settings, mode, features, zone_source, zone_models, zones_dir, do_rerank)
    hits = rank_hits(mark_threshold(hits, policy))
    save_hits(hits, out_hits)
    skipped = len(keywords) - len(queries)
    kept = sum(h.kept for h in hits)
    print(f"✅ Spotted {len(queries)} keywords in {len(records)} lines: {kept}/{len(hits)} hits kept → {out_hits}")
    if skipped:
        print(f"⚠️ {skipped} keywords skipped (unmapped or out of vocabulary)")
    return SpotRun(hits, skipped, len(records))


# ---------------------------------
# Evaluation
# ---------------------------------
def cmd_evaluate(
    hits_path: str | Path,
    manifest: str | Path,
    out_prefix: str | Path,
    keywords_path: str | Path | None = None,
    svg: bool = False,
) -> EvalReport:
    """Curve CSV, report TSV and optional SVG chart for one hit list."""
    hits = load_hits(hits_path)
    records = load_manifest(manifest)
    keywords = load_keywords(keywords_path) if keywords_path else sorted({h.keyword for h in hits})
    gt = GroundTruth.from_transcriptions(transcriptions(records), keywords)
    check_line_coverage(hits, gt)
    report = evaluate(hits, gt)
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{out_prefix}.curve.csv").write_text(format_curve(report.curve), encoding="utf-8")
    Path(f"{out_prefix}.report.tsv").write_text(format_report(report), encoding="utf-8")
    if svg:
        save_pr_chart({Path(hits_path).stem: report.curve}, f"{out_prefix}.svg")
    print(f"✅ MAP {report.mean_ap:.4f} (curve area {report.curve_map:.4f}) → {out_prefix}.report.tsv")
    return report


# ---------------------------------
# DTW baseline
# ---------------------------------
def word_images(img: RasterImage, settings: Settings) -> list[tuple[tuple[int, int], RasterImage]]:
    spans = split_words(img, settings.dtw_min_gap, min_width=settings.window_width)
    return [(span, crop_word(img, span)) for span in spans]


def keyword_exemplars(records: Sequence[ManifestRecord], keywords: Sequence[str], settings: Settings) -> dict[str, RasterImage]:
    """First training occurrence of every keyword whose line splits into exactly its transcribed words."""
    exemplars: dict[str, RasterImage] = {}
    for record in records:
        wanted = [w for w in record.words if w in keywords and w not in exemplars]
        if not wanted:
            continue
        img = load_line(record, settings)
        words = word_images(img, settings)
        if len(words) != len(record.words):
            logger.debug(f"{record.line_id}: {len(words)} ink runs for {len(record.words)} words, skipped")
            continue
        for (_, word_img), text in zip(words, record.words):
            if text in wanted and text not in exemplars:
                exemplars[text] = word_img
        if len(exemplars) == len(keywords):
            break
    return exemplars


def cmd_dtw_baseline(
    train_manifest: str | Path,
    manifest: str | Path,
    settings: Settings,
    keywords_path: str | Path,
    out_hits: str | Path,
) -> SpotRun:
    """Word-level DTW ranking; a line scores minus the distance of its closest word."""
    keywords = load_keywords(keywords_path)
    exemplars = keyword_exemplars(load_manifest(train_manifest), keywords, settings)
    records = load_manifest(manifest)
    params = DtwParams(settings.dtw_band_radius)
    candidates: list[tuple[str, int, tuple[int, int], RasterImage]] = []
    for record in records:
        img = load_line(record, settings)
        for index, (span, word_img) in enumerate(word_images(img, settings)):
            candidates.append((record.line_id, index, span, word_img))
    hits: list[SpotHit] = []
    for keyword in keywords:
        query = exemplars.get(keyword)
        if query is None:
            logger.warning(f"keyword {keyword!r} has no training exemplar, skipped")
            continue
        ranked = dtw_baseline_rank(query, [(f"{lid}\t{i:04d}", w) for lid, i, _, w in candidates], params)
        best: dict[str, tuple[float, int]] = {}
        for cid, distance in ranked:
            line_id, index = cid.split("\t")
            if line_id not in best:
                best[line_id] = (distance, int(index))
        spans = {(lid, i): span for lid, i, span, _ in candidates}
        for line_id, (distance, index) in best.items():
            x0, x1 = spans[(line_id, index)]
            hits.append(SpotHit(line_id, keyword, index, index + 1, x0, x1, -distance))
    hits = rank_hits(hits)
    save_hits(hits, out_hits)
    print(f"✅ DTW baseline: {len(exemplars)}/{len(keywords)} keywords, {len(hits)} hits → {out_hits}")
    return SpotRun(hits, len(keywords) - len(exemplars), len(records))


# ---------------------------------
# Experiment
# ---------------------------------
REPEAT_DIR = "repeat"
DETERMINISM_FILE = "determinism.tsv"


@dataclass
class ExperimentRow:
    variant: str
    mean_ap: float
    curve_map: float
    precision_at_06: float


@dataclass
class ExperimentSummary:
    rows: list[ExperimentRow]
    zone_errors: dict[str, float]
    noiseless_true_positives: int
    eliminated_true_positives: list[tuple[str, str]]
    mismatched_files: list[str] | None = None  # None without a repeat run

    def row(self, variant: str) -> ExperimentRow:
        for r in self.rows:
            if r.variant == variant:
                return r
        raise KeyError(variant)


def _report_row(name: str, hits: Sequence[SpotHit], gt: GroundTruth) -> tuple[ExperimentRow, EvalReport]:
    report = evaluate(hits, gt)
    return ExperimentRow(name, report.mean_ap, report.curve_map, precision_at_recall(report.curve, 0.6)), report


def _run_stem(name: str) -> str:
    return name.replace(" ", "_").replace("+", "p")


def differing_files(first: str | Path, second: str | Path, skip: Sequence[str] = ()) -> list[str]:
    """Relative paths present in only one tree or with different bytes; top-level names in ``skip`` are ignored."""
    first, second = Path(first), Path(second)

    def listing(root: Path) -> set[str]:
        return {
            p.relative_to(root).as_posix()
            for p in root.rglob("*")
            if p.is_file() and p.relative_to(root).parts[0] not in skip
        }

    a, b = listing(first), listing(second)
    differing = a ^ b
    differing |= {rel for rel in a & b if not filecmp.cmp(first / rel, second / rel, shallow=False)}
    return sorted(differing)


def _experiment_pass(settings: Settings, work: Path) -> ExperimentSummary:
    corpus = cmd_synth(settings.synth, work / "corpus")
    train, test = corpus.manifests["train"], corpus.manifests["test"]
    models_dir = work / "models"
    runs_dir = work / "runs"
    models_dir.mkdir(parents=True, exist_ok=True)
    runs_dir.mkdir(parents=True, exist_ok=True)

    zone_model = cmd_train_zones(train, settings, models_dir / "zones.zshm").model_path
    full_fg = cmd_train_chars(train, settings, models_dir / "full-fg.zshm", "full", "fg", corpus.rules_path).model_path
    full_fgbg = cmd_train_chars(train, settings, models_dir / "full-fgbg.zshm", "full", "fg+bg", corpus.rules_path).model_path
    middle = cmd_train_chars(
        train, settings, models_dir / "middle-fgbg.zshm", "middle", "fg+bg", corpus.rules_path
    ).model_path

    variants = [
        (full_fg, "full", "fg", False),
        (full_fgbg, "full", "fg+bg", False),
        (middle, "middle", "fg+bg", False),
        (middle, "middle", "fg+bg", True),
    ]
    records = load_manifest(test)
    gt = GroundTruth.from_transcriptions(transcriptions(records), corpus.lexicon.keywords)
    rows: list[ExperimentRow] = []
    curves = {}
    for model_path, mode, features, do_rerank in variants:
        name = spotting_mode_label(mode, features, do_rerank)
        out = runs_dir / f"{_run_stem(name)}.hits.tsv"
        run = cmd_spot(
            test, settings, model_path, corpus.keywords_path, out, mode, features,
            corpus.rules_path, "hmm", zone_model, None, do_rerank,
        )
        row, report = _report_row(name, run.hits, gt)
        (runs_dir / f"{_run_stem(name)}.report.tsv").write_text(format_report(report), encoding="utf-8")
        rows.append(row)
        curves[name] = report.curve
    dtw = cmd_dtw_baseline(train, test, settings, corpus.keywords_path, runs_dir / "dtw.hits.tsv")
    if dtw.hits:
        row, report = _report_row("DTW baseline", dtw.hits, gt)
        (runs_dir / "dtw.report.tsv").write_text(format_report(report), encoding="utf-8")
        rows.append(row)
        curves["DTW baseline"] = report.curve
    else:
        logger.warning("DTW baseline found no keyword exemplar, left out of the summary")

    with open(work / "summary.tsv", "w", encoding="utf-8") as f:
        f.write("variant\tMAP\tcurve_MAP\tP@R0.6\n")
        for r in rows:
            f.write(f"{r.variant}\t{r.mean_ap:.4f}\t{r.curve_map:.4f}\t{r.precision_at_06:.4f}\n")
    save_pr_chart(curves, work / "pr.svg")

    zone_errors: dict[str, float] = {}
    for source in ("hmm", "global", "local"):
        summary = cmd_segment_zones(
            test, settings, runs_dir / f"zones-{source}", zone_model if source == "hmm" else None,
            None if source == "hmm" else source,
        )
        zone_errors[source] = summary.mean_error
    skewed = cmd_synth(settings.synth.model_copy(update={"skew_jitter_deg": 1.5, "train_lines": 0, "validation_lines": 0}), work / "corpus-skewed")
    for source in ("hmm", "global"):
        summary = cmd_segment_zones(
            skewed.manifests["test"], settings, runs_dir / f"zones-skewed-{source}",
            zone_model if source == "hmm" else None, None if source == "hmm" else source,
        )
        zone_errors[f"skewed {source}"] = summary.mean_error
    with open(work / "zones.tsv", "w", encoding="utf-8") as f:
        f.write("method\tmean_boundary_error\n")
        for method, error in zone_errors.items():
            f.write(f"{method}\t{error:.4f}\n")

    # re-ranking on clean lines with exact zones must not lose a correct hit
    clean = cmd_synth(settings.synth.model_copy(update={"salt_pepper": 0.0, "train_lines": 0, "validation_lines": 0}), work / "corpus-noiseless")
    clean_test = clean.manifests["test"]
    clean_gt = GroundTruth.from_transcriptions(transcriptions(load_manifest(clean_test)), clean.lexicon.keywords)
    clean_runs = []
    for do_rerank in (False, True):
        name = spotting_mode_label("middle", "fg+bg", do_rerank)
        clean_runs.append(cmd_spot(
            clean_test, settings, middle, clean.keywords_path, runs_dir / f"noiseless-{_run_stem(name)}.hits.tsv",
            "middle", "fg+bg", clean.rules_path, "gt", None, None, do_rerank,
        ))
    plain, reranked = clean_runs
    true_positives = sum(h.kept and clean_gt.is_relevant(h) for h in plain.hits)
    lost = eliminated_true_positives(plain.hits, reranked.hits, clean_gt)
    with open(work / "rerank.tsv", "w", encoding="utf-8") as f:
        f.write("corpus\ttrue_positives\teliminated\n")
        f.write(f"noiseless\t{true_positives}\t{len(lost)}\n")
        for line_id, keyword in lost:
            logger.warning(f"re-ranking dropped a correct hit: {keyword!r} on {line_id}")

    for r in rows:
        print(f"📊 {r.variant:<28} MAP {r.mean_ap:.4f}  P@R0.6 {r.precision_at_06:.4f}")
    print(f"📊 noiseless re-ranking: {len(lost)} of {true_positives} true positives eliminated")
    return ExperimentSummary(rows, zone_errors, true_positives, lost)


def cmd_experiment(settings: Settings, work_dir: str | Path, repeat: bool = False) -> ExperimentSummary:
    """
    Synthetic corpus -> zone models -> three character model sets ->
    spotting variants and the DTW baseline -> summary.tsv, zones.tsv,
    rerank.tsv and pr.svg.

    With ``repeat`` the whole run is made a second time under repeat/ and
    every written file is compared byte for byte (determinism.tsv).
    """
    work = Path(work_dir)
    result = _experiment_pass(settings, work)
    if not repeat:
        return result
    again = work / REPEAT_DIR
    if again.exists():
        shutil.rmtree(again)
    _experiment_pass(settings, again)
    result.mismatched_files = differing_files(work, again, skip=(REPEAT_DIR, DETERMINISM_FILE))
    with open(work / DETERMINISM_FILE, "w", encoding="utf-8") as f:
        f.write("file\tstatus\n")
        for rel in result.mismatched_files:
            f.write(f"{rel}\tdiffers\n")
    if result.mismatched_files:
        print(f"⚠️ Repeat run differs in {len(result.mismatched_files)} files → {work / DETERMINISM_FILE}")
    else:
        print("✅ Repeat run is byte-identical")
    return result
