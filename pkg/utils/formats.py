# utils/formats.py
"""
On-disk formats shared by the CLI verbs.

ZSFT feature cache (little-endian):
    magic "ZSFT" | version u32 | frame_count u32 | dim u32 | frames f64[frame_count * dim]

ZSHM model file (little-endian):
    magic "ZSHM" | version u32 | model_count u32 | dim u32
    charset table: per model, label byte length u32 + UTF-8 label
    per model: J u32 | G u32 | d u32
        per state: weights f64[G] | means f64[G * d] | variances f64[G * d]
        log transitions f64[J * 2] (self, forward per state)
    variance floor f64[dim]
"""

import io
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from engine.errors import EvaluationError, ModelFormatError
from engine.evaluation import CurvePoint, EvalReport
from engine.features import FeatureSequence
from engine.seqmodel import CharHmm, GmmState, ModelSet
from engine.spotting import SpotHit

FEATURE_MAGIC = b"ZSFT"
MODEL_MAGIC = b"ZSHM"
FORMAT_VERSION = 1


# ---------------------------------
# Feature cache
# ---------------------------------
def encode_features(X: FeatureSequence) -> bytes:
    header = struct.pack("<4sIII", FEATURE_MAGIC, FORMAT_VERSION, len(X), X.dim)
    return header + X.frames.astype("<f8").tobytes()


def decode_features(data: bytes, provenance: str = "cache", scale: float = 1.0) -> FeatureSequence:
    if len(data) < 16:
        raise ModelFormatError("feature file is truncated")
    magic, version, count, dim = struct.unpack_from("<4sIII", data)
    if magic != FEATURE_MAGIC or version != FORMAT_VERSION:
        raise ModelFormatError(f"not a ZSFT v{FORMAT_VERSION} file")
    if len(data) != 16 + 8 * count * dim:
        raise ModelFormatError("feature payload size does not match its header")
    frames = np.frombuffer(data, dtype="<f8", offset=16).reshape(count, dim).astype(np.float64)
    return FeatureSequence(frames, provenance, scale)


def save_features(X: FeatureSequence, path: str | Path) -> None:
    Path(path).write_bytes(encode_features(X))


def load_features(path: str | Path, scale: float = 1.0) -> FeatureSequence:
    return decode_features(Path(path).read_bytes(), scale=scale)


# ---------------------------------
# Model file
# ---------------------------------
def _f64(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


def encode_models(models: ModelSet) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<4sIII", MODEL_MAGIC, FORMAT_VERSION, len(models.labels), models.dim))
    for label in models.labels:
        raw = label.encode("utf-8")
        out.write(struct.pack("<I", len(raw)))
        out.write(raw)
    for label in models.labels:
        hmm = models.models[label]
        out.write(struct.pack("<III", hmm.n_states, models.n_mix, models.dim))
        for state in hmm.states:
            out.write(_f64(state.weights))
            out.write(_f64(state.means))
            out.write(_f64(state.variances))
        out.write(_f64(hmm.log_trans))
    out.write(_f64(models.var_floor))
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ModelFormatError("model file is truncated")
        values = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return values

    def floats(self, count: int) -> np.ndarray:
        end = self.pos + 8 * count
        if end > len(self.data):
            raise ModelFormatError("model file is truncated")
        values = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos).astype(np.float64)
        self.pos = end
        return values

    def raw(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise ModelFormatError("model file is truncated")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk


def decode_models(data: bytes) -> ModelSet:
    reader = _Reader(data)
    magic, version, count, dim = reader.unpack("<4sIII")
    if magic != MODEL_MAGIC:
        raise ModelFormatError("not a ZSHM model file")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model file version {version}")
    labels = []
    for _ in range(count):
        (size,) = reader.unpack("<I")
        try:
            labels.append(reader.raw(size).decode("utf-8"))
        except UnicodeDecodeError as e:
            raise ModelFormatError(f"invalid UTF-8 in charset table: {e}") from e
    models = []
    for label in labels:
        j_count, g, d = reader.unpack("<III")
        if d != dim:
            raise ModelFormatError(f"model {label!r} has dimension {d}, file declares {dim}")
        states = []
        for _ in range(j_count):
            weights = reader.floats(g)
            means = reader.floats(g * d).reshape(g, d)
            variances = reader.floats(g * d).reshape(g, d)
            states.append(GmmState(weights, means, variances))
        models.append(CharHmm(label, states, reader.floats(j_count * 2).reshape(j_count, 2)))
    var_floor = reader.floats(dim)
    if reader.pos != len(data):
        raise ModelFormatError("trailing bytes after the model file payload")
    return ModelSet(models, var_floor)


def save_models(models: ModelSet, path: str | Path) -> None:
    Path(path).write_bytes(encode_models(models))


def load_models(path: str | Path) -> ModelSet:
    return decode_models(Path(path).read_bytes())


# ---------------------------------
# Hits, curves, reports
# ---------------------------------
def format_hits(hits: Iterable[SpotHit]) -> str:
    return "".join(
        f"{h.keyword}\t{h.line_id}\t{h.a}\t{h.b}\t{h.L_s}\t{h.L_f}\t{h.score:.17g}\t{int(h.kept)}\n" for h in hits
    )


def parse_hits(text: str) -> list[SpotHit]:
    hits = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 8:
            raise EvaluationError(f"hits line {line_no}: expected 8 columns, got {len(cols)}")
        keyword, line_id, a, b, L_s, L_f, score, kept = cols
        try:
            hits.append(SpotHit(line_id, keyword, int(a), int(b), int(L_s), int(L_f), float(score), kept == "1"))
        except ValueError as e:
            raise EvaluationError(f"hits line {line_no}: {e}") from e
    return hits


def save_hits(hits: Iterable[SpotHit], path: str | Path) -> None:
    Path(path).write_text(format_hits(hits), encoding="utf-8")


def load_hits(path: str | Path) -> list[SpotHit]:
    return parse_hits(Path(path).read_text(encoding="utf-8"))


def format_curve(curve: Iterable[CurvePoint]) -> str:
    rows = ["threshold,precision,recall"]
    rows += [f"{p.threshold:.17g},{p.precision:.17g},{p.recall:.17g}" for p in curve]
    return "\n".join(rows) + "\n"


def parse_curve(text: str) -> list[tuple[float, float, float]]:
    lines = text.splitlines()
    if not lines or lines[0] != "threshold,precision,recall":
        raise EvaluationError("curve CSV is missing its header")
    return [tuple(float(v) for v in line.split(",")) for line in lines[1:] if line.strip()]


def format_report(report: EvalReport) -> str:
    rows = ["keyword\taverage_precision"]
    rows += [f"{keyword}\t{ap:.6f}" for keyword, ap in report.average_precision.items()]
    rows += [f"length={length}\t{ap:.6f}" for length, ap in report.by_length.items()]
    if report.excluded:
        rows.append(f"excluded\t{','.join(report.excluded)}")
    rows.append(f"curve_MAP\t{report.curve_map:.6f}")
    rows.append(f"MAP\t{report.mean_ap:.6f}")
    return "\n".join(rows) + "\n"
