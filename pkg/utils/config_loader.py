# utils/config_loader.py
"""
Settings from a KEY=value file (python-dotenv) validated with pydantic.

Only the file is read; the process environment is never consulted.
Keys prefixed SYNTH_ configure the corpus generator. Command-line
overrides (``--set KEY=value``) go through the same validation.
"""

import math
from pathlib import Path
from typing import Literal, Sequence

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from engine.errors import ConfigError
from engine.features import PhogParams, WindowSpec
from engine.seqmodel import MixupSchedule
from engine.synth import SynthConfig

DEFAULT_SETTINGS_PATH = Path(__file__).resolve().parent.parent / "settings.env"
SYNTH_PREFIX = "SYNTH_"


class Settings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # sliding-window features
    window_height: int = Field(40, ge=1)
    window_width: int = Field(6, ge=1)
    window_step: int = Field(3, ge=1)
    phog_levels: int = Field(2, ge=0)
    phog_bins: int = Field(8, ge=1)
    feature_kind: Literal["phog", "lgh"] = "phog"
    deskew: bool = False
    deslant: bool = False
    feature_cache_dir: str = ""

    # character models
    char_states: int = Field(6, ge=1)
    max_mixtures: int = Field(32, ge=1)
    em_iterations: int = Field(3, ge=1)
    var_floor_scale: float = Field(1e-4, gt=0)
    var_floor_min: float = Field(1e-6, gt=0)

    # zone models
    zone_states: int = Field(8, ge=1)
    zone_max_mixtures: int = Field(32, ge=1)
    zone_iterations: int = Field(3, ge=1)
    zone_alpha: float = Field(1.5, gt=0)
    zone_patch_width: int = Field(40, ge=1)
    zone_patch_height: int = Field(8, ge=1)
    zone_v_step: int = Field(4, ge=1)

    # spotting
    threshold_policy: Literal["none", "global", "local"] = "none"
    threshold: float = -math.inf
    rerank_min_peak_area: int = Field(0, ge=0)

    # DTW baseline
    dtw_band_radius: int = Field(10, ge=0)
    dtw_min_gap: int = Field(12, ge=1)

    synth: SynthConfig = SynthConfig()

    @property
    def window(self) -> WindowSpec:
        return WindowSpec(self.window_height, self.window_width, self.window_step)

    @property
    def phog(self) -> PhogParams:
        return PhogParams(self.phog_levels, self.phog_bins)

    @property
    def char_schedule(self) -> MixupSchedule:
        return MixupSchedule(self.max_mixtures)

    @property
    def zone_schedule(self) -> MixupSchedule:
        return MixupSchedule(self.zone_max_mixtures)


def parse_overrides(items: Sequence[str]) -> dict[str, str]:
    values = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not KEY=value")
        values[key.strip()] = value.strip()
    return values


def build_settings(values: dict[str, str | None]) -> Settings:
    general: dict[str, str | None] = {}
    synth: dict[str, str | None] = {}
    for key, value in values.items():
        if key.upper().startswith(SYNTH_PREFIX):
            synth[key[len(SYNTH_PREFIX):].lower()] = value
        else:
            general[key.lower()] = value
    try:
        synth_cfg = SynthConfig(**synth)
        return Settings(**general, synth=synth_cfg)
    except ValidationError as e:
        raise ConfigError(f"invalid settings: {e}") from e
    except TypeError as e:
        raise ConfigError(f"invalid settings: {e}") from e


def load_settings(path: str | Path | None = None, overrides: Sequence[str] = ()) -> Settings:
    """Read the settings file (the bundled settings.env by default) and apply overrides."""
    path = Path(path) if path is not None else DEFAULT_SETTINGS_PATH
    values: dict[str, str | None] = {}
    if path.exists():
        values.update(dotenv_values(path, encoding="utf-8"))
    elif path != DEFAULT_SETTINGS_PATH:
        raise ConfigError(f"settings file {path} not found")
    values.update(parse_overrides(overrides))
    return build_settings(values)
