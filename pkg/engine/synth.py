"""
Synthetic three-zone script and corpus generator.

Glyph bodies sit in the middle band under a continuous headline: a right
leg plus one of five left elements, with or without a mid bar. Some bodies
get an upper mark (caret, U+0302) or a lower mark (ring, U+0325), giving
full-form graphemes whose middle form is the bare body. Every line comes
with exact per-column zone rows, so zone segmentation and re-ranking can be
checked against ground truth.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from pydantic import BaseModel, Field, model_validator

from engine.lexmap import ZoneRule, ZoneRuleTable, save_rule_table, split_graphemes
from engine.raster import RasterImage
from engine.zones import ZoneBoundaries, save_zone_boundaries
from utils.image_io import save_image

logger = logging.getLogger(__name__)

UPPER_MARK = "\u0302"
LOWER_MARK = "\u0325"
BODY_SYMBOLS = "abcdefghij"
LEFT_ELEMENTS = 5

# vertical layout (rows, before skew padding)
TOP_MARGIN = 4
UPPER_ROWS = 14
MIDDLE_ROWS = 22
LOWER_ROWS = 12
BOTTOM_MARGIN = 4
MIDDLE_TOP = TOP_MARGIN + UPPER_ROWS
MIDDLE_BOTTOM = MIDDLE_TOP + MIDDLE_ROWS - 1
LINE_HEIGHT = MIDDLE_BOTTOM + 1 + LOWER_ROWS + BOTTOM_MARGIN
STROKE = 3
PAPER = 235
INK = 40


class SynthConfig(BaseModel):
    alphabet_size: int = Field(10, ge=2, le=len(BODY_SYMBOLS))
    upper_fraction: float = Field(0.3, ge=0.0, le=1.0)
    lower_fraction: float = Field(0.3, ge=0.0, le=1.0)
    glyph_width_min: int = Field(21, ge=12)
    glyph_width_max: int = Field(27, ge=12)
    word_gap_min: int = Field(28, ge=1)
    word_gap_max: int = Field(40, ge=1)
    margin: int = Field(32, ge=0)
    words_per_line_min: int = Field(2, ge=1)
    words_per_line_max: int = Field(4, ge=1)
    word_length_min: int = Field(3, ge=1)
    word_length_max: int = Field(5, ge=1)
    lexicon_size: int = Field(20, ge=1)
    keywords: int = Field(8, ge=1)
    twins: int = Field(2, ge=0)
    train_lines: int = Field(150, ge=0)
    validation_lines: int = Field(20, ge=0)
    test_lines: int = Field(50, ge=0)
    salt_pepper: float = Field(0.002, ge=0.0, le=1.0)
    skew_jitter_deg: float = Field(0.0, ge=0.0, le=10.0)
    seed: int = 42

    @model_validator(mode="after")
    def check_ranges(self):
        for low, high in (
            ("glyph_width_min", "glyph_width_max"),
            ("word_gap_min", "word_gap_max"),
            ("words_per_line_min", "words_per_line_max"),
            ("word_length_min", "word_length_max"),
        ):
            if getattr(self, low) > getattr(self, high):
                raise ValueError(f"{low} must not exceed {high}")
        if self.keywords + self.twins > self.lexicon_size:
            raise ValueError("lexicon_size must cover keywords and their twins")
        return self


@dataclass(frozen=True)
class Glyph:
    body: int  # index into the body alphabet
    upper: bool = False
    lower: bool = False

    @property
    def grapheme(self) -> str:
        return BODY_SYMBOLS[self.body] + (UPPER_MARK if self.upper else "") + (LOWER_MARK if self.lower else "")


@dataclass(frozen=True)
class Script:
    bodies: list[str]
    upper_marked: list[int]
    lower_marked: list[int]

    @property
    def glyphs(self) -> list[Glyph]:
        out = [Glyph(b) for b in range(len(self.bodies))]
        out += [Glyph(b, upper=True) for b in self.upper_marked]
        out += [Glyph(b, lower=True) for b in self.lower_marked]
        return out

    def glyph(self, grapheme: str) -> Glyph:
        return next(g for g in self.glyphs if g.grapheme == grapheme)

    def rule_table(self) -> ZoneRuleTable:
        return ZoneRuleTable(
            {g.grapheme: ZoneRule((BODY_SYMBOLS[g.body],), int(g.upper), int(g.lower)) for g in self.glyphs}
        )


def build_script(cfg: SynthConfig) -> Script:
    n = cfg.alphabet_size
    n_upper = int(round(cfg.upper_fraction * n))
    n_lower = min(int(round(cfg.lower_fraction * n)), n - n_upper)
    # marks go to disjoint bodies: even positions first for upper, odd for lower
    order = list(range(0, n, 2)) + list(range(1, n, 2))
    upper = sorted(order[:n_upper])
    lower = sorted(order[n_upper:n_upper + n_lower])
    return Script(list(BODY_SYMBOLS[:n]), upper, lower)


# ---------------------------------
# Lexicon
# ---------------------------------
@dataclass(frozen=True)
class Lexicon:
    words: list[str]
    keywords: list[str]


def _toggle_marks(word: str, script: Script) -> str:
    """Twin with the same middle form: marks removed, or one added when the word has none."""
    glyphs = [script.glyph(g) for g in split_graphemes(word)]
    if any(g.upper or g.lower for g in glyphs):
        return "".join(Glyph(g.body).grapheme for g in glyphs)
    for g in glyphs:
        if g.body in script.upper_marked:
            return word.replace(g.grapheme, Glyph(g.body, upper=True).grapheme, 1)
        if g.body in script.lower_marked:
            return word.replace(g.grapheme, Glyph(g.body, lower=True).grapheme, 1)
    return word


def build_lexicon(cfg: SynthConfig, script: Script, rng: np.random.Generator) -> Lexicon:
    glyphs = script.glyphs
    marked = [g for g in glyphs if g.upper or g.lower]
    words: list[str] = []
    keywords: list[str] = []

    def random_word(force_mark: bool) -> str:
        length = int(rng.integers(cfg.word_length_min, cfg.word_length_max + 1))
        picks = [glyphs[int(i)] for i in rng.integers(0, len(glyphs), size=length)]
        if force_mark and marked and not any(g.upper or g.lower for g in picks):
            picks[int(rng.integers(0, length))] = marked[int(rng.integers(0, len(marked)))]
        return "".join(g.grapheme for g in picks)

    attempts = 0
    while len(keywords) < cfg.keywords:
        attempts += 1
        if attempts > 10_000:
            raise ValueError("cannot draw enough distinct keywords, widen the word length range")
        word = random_word(force_mark=len(keywords) % 2 == 0)
        if word not in keywords:
            keywords.append(word)
    words.extend(keywords)
    for keyword in keywords[: cfg.twins]:
        twin = _toggle_marks(keyword, script)
        if twin not in words:
            words.append(twin)
    while len(words) < cfg.lexicon_size:
        attempts += 1
        if attempts > 20_000:
            raise ValueError("cannot draw enough distinct lexicon words")
        word = random_word(force_mark=False)
        if word not in words:
            words.append(word)
    return Lexicon(words, keywords)


# ---------------------------------
# Rendering
# ---------------------------------
def _draw_body(draw: ImageDraw.ImageDraw, x: int, w: int, glyph: Glyph) -> None:
    top, bottom = MIDDLE_TOP, MIDDLE_BOTTOM
    left = glyph.body % LEFT_ELEMENTS
    has_bar = glyph.body >= LEFT_ELEMENTS
    draw.rectangle([x + w - 5, top, x + w - 3, bottom], fill=1)
    if left == 0:
        draw.rectangle([x + 2, top, x + 4, bottom], fill=1)
    elif left == 1:
        draw.rectangle([x + 2, top, x + 4, top + 11], fill=1)
    elif left == 2:
        draw.rectangle([x + 2, top, x + 4, bottom - 9], fill=1)
        draw.ellipse([x + 2, bottom - 10, x + w // 2, bottom], outline=1, width=STROKE)
    elif left == 3:
        draw.line([(x + 3, bottom), (x + w // 2, top + 2)], fill=1, width=STROKE)
    if has_bar:
        draw.rectangle([x + 4, top + 9, x + w - 5, top + 11], fill=1)
    cx = x + w // 2
    if glyph.upper:
        draw.line([(cx - 5, MIDDLE_TOP - 2), (cx, TOP_MARGIN + 4), (cx + 5, MIDDLE_TOP - 2)], fill=1, width=2)
    if glyph.lower:
        draw.ellipse([cx - 4, MIDDLE_BOTTOM + 3, cx + 4, MIDDLE_BOTTOM + 11], outline=1, width=2)


def render_line(words: list[str], script: Script, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Binary ink mask (before skew) of one line of words."""
    layout: list[tuple[int, int, Glyph]] = []
    word_spans: list[tuple[int, int]] = []
    x = cfg.margin
    for k, word in enumerate(words):
        if k:
            x += int(rng.integers(cfg.word_gap_min, cfg.word_gap_max + 1))
        start = x
        for grapheme in split_graphemes(word):
            w = int(rng.integers(cfg.glyph_width_min, cfg.glyph_width_max + 1))
            layout.append((x, w, script.glyph(grapheme)))
            x += w
        word_spans.append((start, x))
    width = x + cfg.margin
    canvas = Image.new("L", (width, LINE_HEIGHT), 0)
    draw = ImageDraw.Draw(canvas)
    for start, end in word_spans:
        draw.rectangle([start, MIDDLE_TOP, end - 1, MIDDLE_TOP + STROKE - 1], fill=1)
    for gx, w, glyph in layout:
        _draw_body(draw, gx, w, glyph)
    return np.asarray(canvas, dtype=np.uint8)


def apply_skew(mask: np.ndarray, degrees: float) -> tuple[np.ndarray, np.ndarray]:
    """Shift every column vertically by round(x * tan(angle)); returns the grown mask and per-column offsets."""
    height, width = mask.shape
    shifts = np.rint(np.arange(width) * math.tan(math.radians(degrees))).astype(np.int64)
    shifts -= shifts.min()
    out = np.zeros((height + int(shifts.max()), width), dtype=np.uint8)
    for col, dy in enumerate(shifts):
        out[dy:dy + height, col] = mask[:, col]
    return out, shifts


def to_gray(mask: np.ndarray, salt_pepper: float, rng: np.random.Generator) -> np.ndarray:
    paper = PAPER + rng.integers(-8, 9, size=mask.shape)
    ink = INK + rng.integers(-15, 16, size=mask.shape)
    gray = np.where(mask.astype(bool), ink, paper)
    if salt_pepper > 0:
        noisy = rng.random(mask.shape) < salt_pepper
        gray = np.where(noisy, rng.choice([0, 255], size=mask.shape), gray)
    return np.clip(gray, 0, 255).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class SynthLine:
    line_id: str
    transcription: str
    image: RasterImage
    zones: ZoneBoundaries


def synth_line(line_id: str, words: list[str], script: Script, cfg: SynthConfig, rng: np.random.Generator) -> SynthLine:
    mask = render_line(words, script, cfg, rng)
    angle = float(rng.uniform(-cfg.skew_jitter_deg, cfg.skew_jitter_deg)) if cfg.skew_jitter_deg > 0 else 0.0
    mask, shifts = apply_skew(mask, angle)
    width = mask.shape[1]
    zones = ZoneBoundaries.from_strips(
        [(c, c + 1) for c in range(width)], MIDDLE_TOP + shifts, MIDDLE_BOTTOM + shifts, mask.shape[0]
    )
    gray = to_gray(mask, cfg.salt_pepper, rng)
    return SynthLine(line_id, " ".join(words), RasterImage.gray(gray), zones)


# ---------------------------------
# Corpus
# ---------------------------------
@dataclass(frozen=True)
class SynthCorpus:
    root: Path
    manifests: dict[str, Path]
    keywords_path: Path
    rules_path: Path
    lexicon: Lexicon


def generate_corpus(cfg: SynthConfig, out_dir: str | Path) -> SynthCorpus:
    """Write images/, zones/, one manifest per split, keywords.txt, lexicon.txt and rules.tsv."""
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "zones").mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    script = build_script(cfg)
    lexicon = build_lexicon(cfg, script, rng)

    manifests = {}
    for split, count in (("train", cfg.train_lines), ("validation", cfg.validation_lines), ("test", cfg.test_lines)):
        rows = []
        for i in range(count):
            n_words = int(rng.integers(cfg.words_per_line_min, cfg.words_per_line_max + 1))
            words = [lexicon.words[int(j)] for j in rng.integers(0, len(lexicon.words), size=n_words)]
            line = synth_line(f"{split}-{i:04d}", words, script, cfg, rng)
            image_rel = f"images/{line.line_id}.pgm"
            zones_rel = f"zones/{line.line_id}.tsv"
            save_image(line.image, root / image_rel)
            save_zone_boundaries(line.zones, root / zones_rel)
            rows.append(f"{line.line_id}\t{image_rel}\t{line.transcription}\t{zones_rel}")
        manifests[split] = root / f"{split}.tsv"
        manifests[split].write_text("\n".join(rows) + ("\n" if rows else ""), encoding="utf-8")
        logger.info(f"synth: wrote {count} {split} lines")

    keywords_path = root / "keywords.txt"
    keywords_path.write_text("\n".join(lexicon.keywords) + "\n", encoding="utf-8")
    (root / "lexicon.txt").write_text("\n".join(lexicon.words) + "\n", encoding="utf-8")
    rules_path = root / "rules.tsv"
    save_rule_table(script.rule_table(), rules_path)
    return SynthCorpus(root, manifests, keywords_path, rules_path, lexicon)
