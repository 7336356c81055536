"""Exception hierarchy shared by every ZoneSpot worker module."""


class ZoneSpotError(Exception):
    """Base class for all data/processing errors (CLI exit code 2)."""


class EmptyImage(ZoneSpotError):
    pass


class InsufficientInk(ZoneSpotError):
    pass


class TooShort(ZoneSpotError):
    """Sequence has fewer frames than the shortest path through a network."""

    def __init__(self, frames: int, minimum: int):
        super().__init__(f"sequence of {frames} frames is shorter than the minimum path length {minimum}")
        self.frames = frames
        self.minimum = minimum


class OutOfVocabulary(ZoneSpotError):
    def __init__(self, symbol: str):
        super().__init__(f"symbol {symbol!r} has no trained model")
        self.symbol = symbol


class UnmappedGrapheme(ZoneSpotError):
    def __init__(self, grapheme: str):
        super().__init__(f"grapheme {grapheme!r} has no zone rule")
        self.grapheme = grapheme


class EmptyMiddleForm(ZoneSpotError):
    pass


class BandTooNarrow(ZoneSpotError):
    pass


class RuleTableError(ZoneSpotError):
    def __init__(self, message: str, line_no: int | None = None):
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)
        self.line_no = line_no


class ModelFormatError(ZoneSpotError):
    pass


class ManifestError(ZoneSpotError):
    pass


class TrainingError(ZoneSpotError):
    pass


class ZoneError(ZoneSpotError):
    pass


class EvaluationError(ZoneSpotError):
    pass


class ConfigError(ZoneSpotError):
    pass
