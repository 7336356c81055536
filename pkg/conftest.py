"""Shared fixtures: small hand-drawn lines, one-dimensional toy models and a tiny synthetic corpus."""

import math

import numpy as np
import pytest

from engine.features import FeatureSequence
from engine.raster import RasterImage
from engine.seqmodel import SPACE, CharHmm, GmmState, ModelSet
from engine.synth import SynthConfig


def draw(rows: list[str]) -> RasterImage:
    """Binary image from strings of '#' (ink) and '.' (background)."""
    return RasterImage.binary(np.array([[c == "#" for c in row] for row in rows]))


def one_dim_model(label: str, means: list[float], loop: float = 0.6) -> CharHmm:
    states = [GmmState(np.array([1.0]), np.array([[m]]), np.array([[1.0]])) for m in means]
    trans = np.tile([math.log(loop), math.log(1 - loop)], (len(means), 1))
    return CharHmm(label, states, trans)


def frames(*values: float) -> FeatureSequence:
    return FeatureSequence(np.array(values, dtype=np.float64)[:, None])


@pytest.fixture
def toy_models() -> ModelSet:
    # a: two states centred on 0 and 1, b: one state on 4, space: one state on -3
    return ModelSet(
        [one_dim_model("a", [0.0, 1.0]), one_dim_model("b", [4.0]), one_dim_model(SPACE, [-3.0])],
        var_floor=np.array([1e-3]),
    )


@pytest.fixture
def arch() -> RasterImage:
    # "n"-like arch: a cavity open to the bottom
    return draw([
        ".......",
        ".#####.",
        ".#...#.",
        ".#...#.",
        ".#...#.",
        ".......",
    ])


@pytest.fixture
def cup() -> RasterImage:
    # "u"-like cup: a cavity open to the top
    return draw([
        ".......",
        ".#...#.",
        ".#...#.",
        ".#####.",
        ".......",
    ])


@pytest.fixture
def tiny_synth() -> SynthConfig:
    return SynthConfig(train_lines=12, validation_lines=4, test_lines=6, lexicon_size=10, keywords=4, twins=1, seed=7)
