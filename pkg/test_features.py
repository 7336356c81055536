import math

import numpy as np
import pytest

from engine.errors import EmptyImage
from engine.features import (
    FeatureSequence,
    PhogParams,
    WindowSpec,
    background_mask,
    descriptor_dim,
    dtw_profile_features,
    extract_line_features,
    frame_windows,
    lgh,
    phog,
)
from engine.raster import RasterImage


def line_image(width: int = 120, height: int = 40) -> RasterImage:
    rng = np.random.default_rng(0)
    return RasterImage.binary(rng.random((height, width)) < 0.3)


def test_phog_dimension():
    assert PhogParams().dim == 168
    assert PhogParams(levels=0, bins=9).dim == 9
    assert descriptor_dim("lgh", PhogParams()) == 128


@pytest.mark.parametrize("mode, dim", [("fg", 168), ("bg", 168), ("fg+bg", 336)])
def test_frame_dimension_per_mode(mode, dim):
    seq = extract_line_features(line_image(), mode=mode)
    assert seq.dim == dim


def test_lgh_frames():
    seq = extract_line_features(line_image(), mode="fg", kind="lgh")
    assert seq.dim == 128


def test_frame_count_follows_window_step():
    spec = WindowSpec(40, 6, 3)
    seq = extract_line_features(line_image(width=120), spec, mode="fg")
    assert len(seq) == (120 - 6) // 3 + 1
    assert seq.scale == 1.0


def test_narrow_line_yields_one_frame():
    img = RasterImage.binary(np.ones((40, 4)))
    assert len(frame_windows(img, WindowSpec(40, 6, 3))) == 1


def test_window_step_must_not_exceed_width():
    with pytest.raises(ValueError):
        WindowSpec(40, 6, 7)


def test_column_span():
    assert WindowSpec(40, 6, 3).column_span(2, 5) == (6, 18)


def test_phog_levels_are_l1_normalized():
    window = line_image(6, 40).pixels
    vec = phog(window)
    assert vec[:8].sum() == pytest.approx(1.0)
    assert vec[8:40].sum() == pytest.approx(1.0)
    assert vec[40:].sum() == pytest.approx(1.0)


def test_blank_window_gives_zero_descriptor():
    blank = np.zeros((40, 6), dtype=np.uint8)
    assert not phog(blank).any()
    assert not lgh(blank).any()


def test_background_mask_of_arch(arch):
    mask = background_mask(arch)
    assert mask.pixels.sum() == 9


def test_feature_sequence_rejects_non_finite():
    with pytest.raises(ValueError):
        FeatureSequence(np.array([[np.nan, 1.0]]))


def test_dtw_profiles_are_normalized(arch):
    channels = dtw_profile_features(arch)
    assert len(channels) == 4
    for values in channels:
        assert values.shape == (arch.width,)
        assert values.min() >= 0.0 and values.max() <= 1.0


def test_dtw_profiles_need_ink():
    with pytest.raises(EmptyImage):
        dtw_profile_features(RasterImage.binary(np.zeros((5, 5))))


def pixel_gradient(data: np.ndarray, y: int, x: int) -> tuple[float, float]:
    """3x3 Sobel at one pixel with replicated borders."""
    h, w = data.shape

    def at(r: int, c: int) -> float:
        return float(data[min(max(r, 0), h - 1), min(max(c, 0), w - 1)])

    smooth = (1.0, 2.0, 1.0)
    gx = sum(s * (at(y + d, x + 1) - at(y + d, x - 1)) for d, s in zip((-1, 0, 1), smooth))
    gy = sum(s * (at(y + 1, x + d) - at(y - 1, x + d)) for d, s in zip((-1, 0, 1), smooth))
    return gx, gy


def pixel_phog(window: np.ndarray, levels: int = 2, bins: int = 8) -> np.ndarray:
    h, w = window.shape
    out = []
    for level in range(levels + 1):
        grid = 2 ** level
        hist = np.zeros((grid, grid, bins))
        for y in range(h):
            for x in range(w):
                gx, gy = pixel_gradient(window, y, x)
                magnitude = math.hypot(gx, gy)
                b = min(int((math.degrees(math.atan2(gy, gx)) % 360.0) // (360.0 / bins)), bins - 1)
                row = sum((k * h) // grid <= y for k in range(1, grid))
                col = sum((k * w) // grid <= x for k in range(1, grid))
                hist[row, col, b] += magnitude
        total = hist.sum()
        out.append((hist / total if total > 0 else hist).ravel())
    return np.concatenate(out)


def test_phog_of_a_vertical_step_edge():
    window = np.zeros((40, 6), dtype=np.uint8)
    window[:, :3] = 1
    vec = phog(window)
    np.testing.assert_allclose(vec, pixel_phog(window), atol=1e-12)
    # ink on the left: the gradient points towards -x, all weight in the 180 deg bin
    np.testing.assert_allclose(vec[:8], np.eye(8)[4])


@pytest.mark.parametrize("seed", range(5))
def test_phog_matches_per_pixel_computation(seed):
    rng = np.random.default_rng(seed)
    window = (rng.random((int(rng.integers(4, 41)), int(rng.integers(2, 9)))) < 0.4).astype(np.uint8)
    np.testing.assert_allclose(phog(window), pixel_phog(window), atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_lgh_is_level_two_phog_normalized_per_cell(seed):
    window = (np.random.default_rng(seed).random((40, 6)) < 0.4).astype(np.uint8)
    cells = phog(window)[40:].reshape(16, 8)
    sums = cells.sum(axis=1, keepdims=True)
    expected = np.divide(cells, sums, out=np.zeros_like(cells), where=sums > 0)
    np.testing.assert_allclose(lgh(window).reshape(16, 8), expected, atol=1e-12)


def test_descriptors_stay_finite_on_random_windows():
    rng = np.random.default_rng(99)
    p = PhogParams()
    for _ in range(1000):
        window = (rng.random((int(rng.integers(1, 41)), int(rng.integers(1, 9)))) < rng.random()).astype(np.uint8)
        vec = phog(window, p)
        assert vec.shape == (p.dim,) and np.isfinite(vec).all()
        for start, end in ((0, 8), (8, 40), (40, 168)):
            assert vec[start:end].sum() == pytest.approx(1.0) or not vec[start:end].any()
        assert np.isfinite(lgh(window)).all()


def test_blank_right_padding_keeps_existing_frames():
    img = line_image(width=30)
    padded = RasterImage.binary(np.hstack([img.pixels, np.zeros((40, 12), dtype=np.uint8)]))
    original = extract_line_features(img, mode="fg+bg")
    extended = extract_line_features(padded, mode="fg+bg")
    assert len(extended) > len(original)
    np.testing.assert_array_equal(extended.frames[: len(original)], original.frames)


def test_narrow_line_is_zero_padded_to_one_window():
    narrow = RasterImage.binary(np.random.default_rng(4).random((40, 4)) < 0.4)
    window = np.zeros((40, 6), dtype=np.uint8)
    window[:, :4] = narrow.pixels
    seq = extract_line_features(narrow, mode="fg")
    assert len(seq) == 1
    np.testing.assert_array_equal(seq.frames[0], phog(window))
