# utils/manifest_loader.py
"""Dataset manifests: UTF-8 TSV `line_id<TAB>image_path<TAB>transcription<TAB>[zones_path]`."""

from dataclasses import dataclass
from pathlib import Path

from engine.errors import ManifestError
from engine.lexmap import split_graphemes


@dataclass(frozen=True)
class ManifestRecord:
    line_id: str
    image_path: Path
    transcription: str
    zones_path: Path | None = None

    @property
    def words(self) -> list[str]:
        return self.transcription.split()

    def word_graphemes(self) -> list[list[str]]:
        return [split_graphemes(word) for word in self.words]


def load_manifest(path: str | Path, require_zones: bool = False) -> list[ManifestRecord]:
    """Parse a manifest; paths are resolved relative to the manifest file and must exist."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    base = path.parent
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (3, 4):
            raise ManifestError(f"{path}:{line_no}: expected 3 or 4 tab-separated columns, got {len(cols)}")
        line_id, image, transcription = cols[:3]
        zones = cols[3] if len(cols) == 4 and cols[3] else None
        if line_id in seen:
            raise ManifestError(f"{path}:{line_no}: duplicate line id {line_id!r}")
        seen.add(line_id)
        image_path = base / image
        if not image_path.exists():
            raise ManifestError(f"{path}:{line_no}: image {image_path} not found")
        zones_path = base / zones if zones else None
        if zones_path is not None and not zones_path.exists():
            raise ManifestError(f"{path}:{line_no}: zone file {zones_path} not found")
        if require_zones and zones_path is None:
            raise ManifestError(f"{path}:{line_no}: line {line_id!r} has no zone ground truth")
        records.append(ManifestRecord(line_id, image_path, transcription, zones_path))
    return records


def transcriptions(records: list[ManifestRecord]) -> dict[str, str]:
    return {r.line_id: r.transcription for r in records}
