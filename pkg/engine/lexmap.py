"""
Full-form keyword -> middle-zone transcription mapping.

Rules are keyed on grapheme clusters (a base character plus any following
combining marks / joiners) and loaded from a UTF-8 TSV table:

    grapheme<TAB>middle_form<TAB>upper_count<TAB>lower_count

``middle_form`` is itself a string of graphemes; an empty field means the
grapheme lives entirely outside the middle zone.
"""

import logging
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from engine.errors import EmptyMiddleForm, RuleTableError, UnmappedGrapheme

logger = logging.getLogger(__name__)

ZWJ = "\u200d"
ZWNJ = "\u200c"


def split_graphemes(text: str) -> list[str]:
    """Base character plus trailing combining marks (Mn/Mc/Me) and joiners."""
    clusters: list[str] = []
    for ch in text:
        attaches = unicodedata.category(ch) in ("Mn", "Mc", "Me") or ch in (ZWJ, ZWNJ)
        if clusters and attaches:
            clusters[-1] += ch
        else:
            clusters.append(ch)
    return clusters


@dataclass(frozen=True)
class ZoneRule:
    middle_form: tuple[str, ...]
    upper_marks: int = 0
    lower_marks: int = 0


@dataclass
class ZoneRuleTable:
    rules: dict[str, ZoneRule] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rules)

    @property
    def middle_charset(self) -> list[str]:
        symbols = {s for rule in self.rules.values() for s in rule.middle_form}
        return sorted(symbols)

    def validate(self, charset: Iterable[str], middle_charset: Iterable[str] | None = None) -> None:
        """Every charset grapheme needs a rule and no rule may emit an unknown middle symbol."""
        charset = set(charset)
        allowed = set(middle_charset) if middle_charset is not None else charset
        missing = sorted(charset - set(self.rules))
        if missing:
            raise RuleTableError(f"graphemes without a rule: {missing}")
        middle = set(self.middle_charset)
        unknown = sorted(middle - allowed)
        if unknown:
            raise RuleTableError(f"middle forms use symbols outside the charset: {unknown}")


@dataclass(frozen=True)
class KeywordQuery:
    raw_text: str
    middle_transcription: tuple[str, ...]
    upper_modifiers: int
    lower_modifiers: int

    @property
    def graphemes(self) -> list[str]:
        return split_graphemes(self.raw_text)


def map_keyword(raw: str, table: ZoneRuleTable) -> KeywordQuery:
    middle: list[str] = []
    upper = lower = 0
    for grapheme in split_graphemes(raw):
        rule = table.rules.get(grapheme)
        if rule is None:
            raise UnmappedGrapheme(grapheme)
        middle.extend(rule.middle_form)
        upper += rule.upper_marks
        lower += rule.lower_marks
    if not middle:
        raise EmptyMiddleForm(f"keyword {raw!r} has no middle-zone component")
    return KeywordQuery(raw, tuple(middle), upper, lower)


def full_form_query(raw: str) -> KeywordQuery:
    """Query for full-line spotting: every grapheme is its own symbol, no modifier expectations."""
    graphemes = tuple(split_graphemes(raw))
    if not graphemes:
        raise EmptyMiddleForm("empty keyword")
    return KeywordQuery(raw, graphemes, 0, 0)


# ---------------------------------
# TSV codec
# ---------------------------------
def _parse_count(value: str, line_no: int, name: str) -> int:
    try:
        count = int(value)
    except ValueError:
        raise RuleTableError(f"{name} must be an integer, got {value!r}", line_no) from None
    if count < 0:
        raise RuleTableError(f"{name} must be >= 0", line_no)
    return count


def parse_rule_table(text: str, charset: Iterable[str] | None = None) -> ZoneRuleTable:
    table = ZoneRuleTable()
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise RuleTableError(f"expected 4 tab-separated columns, got {len(cols)}", line_no)
        grapheme, middle, upper, lower = cols
        if len(split_graphemes(grapheme)) != 1:
            raise RuleTableError(f"{grapheme!r} is not a single grapheme", line_no)
        if grapheme in table.rules:
            raise RuleTableError(f"duplicate rule for {grapheme!r}", line_no)
        table.rules[grapheme] = ZoneRule(
            middle_form=tuple(split_graphemes(middle)),
            upper_marks=_parse_count(upper, line_no, "upper_count"),
            lower_marks=_parse_count(lower, line_no, "lower_count"),
        )
    if charset is not None:
        table.validate(charset)
    return table


def load_rule_table(path: str | Path, charset: Iterable[str] | None = None) -> ZoneRuleTable:
    table = parse_rule_table(Path(path).read_text(encoding="utf-8"), charset)
    logger.info(f"loaded {len(table)} zone rules from {path}")
    return table


def format_rule_table(table: ZoneRuleTable) -> str:
    lines = ["# grapheme\tmiddle_form\tupper_count\tlower_count"]
    for grapheme, rule in table.rules.items():
        lines.append(f"{grapheme}\t{''.join(rule.middle_form)}\t{rule.upper_marks}\t{rule.lower_marks}")
    return "\n".join(lines) + "\n"


def save_rule_table(table: ZoneRuleTable, path: str | Path) -> None:
    Path(path).write_text(format_rule_table(table), encoding="utf-8")
