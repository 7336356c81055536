import pytest

from engine.errors import ConfigError, ManifestError
from utils.config_loader import DEFAULT_SETTINGS_PATH, build_settings, load_settings, parse_overrides
from utils.manifest_loader import load_manifest, transcriptions


def test_bundled_settings_load():
    assert DEFAULT_SETTINGS_PATH.exists()
    settings = load_settings()
    assert settings.window.win_height == 40
    assert settings.phog.dim == 168
    assert settings.synth.seed == 42


def test_defaults_without_a_file():
    settings = build_settings({})
    assert (settings.char_states, settings.max_mixtures, settings.zone_states) == (6, 32, 8)
    assert (settings.zone_alpha, settings.zone_v_step) == (1.5, 4)
    assert settings.char_schedule.stages(1)[-1] == 32
    assert settings.rerank_min_peak_area == 0


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "s.env"
    path.write_text("WINDOW_STEP=2\nSYNTH_TEST_LINES=5\n", encoding="utf-8")
    settings = load_settings(path, ["window_step=3", "SYNTH_SEED=9"])
    assert settings.window_step == 3
    assert settings.synth.test_lines == 5
    assert settings.synth.seed == 9


@pytest.mark.parametrize("override", ["NO_SUCH_KEY=1", "WINDOW_STEP=zero", "ZONE_ALPHA=-1", "RERANK_MIN_PEAK_AREA=-1", "SYNTH_KEYWORDS=99"])
def test_invalid_settings_are_config_errors(override):
    with pytest.raises(ConfigError):
        load_settings(None, [override])


def test_override_syntax():
    assert parse_overrides(["A=1", " b = x "]) == {"A": "1", "b": "x"}
    with pytest.raises(ConfigError):
        parse_overrides(["novalue"])


def test_missing_settings_file(tmp_path):
    with pytest.raises(ConfigError):
        load_settings(tmp_path / "absent.env")


def write_manifest(tmp_path, rows: list[str]):
    (tmp_path / "l1.pgm").write_bytes(b"")
    (tmp_path / "l1.tsv").write_text("", encoding="utf-8")
    path = tmp_path / "m.tsv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def test_manifest_records(tmp_path):
    path = write_manifest(tmp_path, ["# comment", "l1\tl1.pgm\tab c\tl1.tsv", "", "l2\tl1.pgm\tc"])
    records = load_manifest(path)
    assert [r.line_id for r in records] == ["l1", "l2"]
    assert records[0].zones_path == tmp_path / "l1.tsv"
    assert records[1].zones_path is None
    assert records[0].words == ["ab", "c"]
    assert transcriptions(records) == {"l1": "ab c", "l2": "c"}


@pytest.mark.parametrize(
    "rows",
    [
        ["l1\tl1.pgm"],
        ["l1\tl1.pgm\ta", "l1\tl1.pgm\tb"],
        ["l1\tmissing.pgm\ta"],
        ["l1\tl1.pgm\ta\tmissing.tsv"],
    ],
)
def test_manifest_errors(tmp_path, rows):
    with pytest.raises(ManifestError):
        load_manifest(write_manifest(tmp_path, rows))


def test_manifest_requires_zones(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(write_manifest(tmp_path, ["l1\tl1.pgm\ta"]), require_zones=True)
