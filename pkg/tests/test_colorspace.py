import numpy as np
import pytest

from facehue.colorspace import (
    ColorspaceError,
    LabImage,
    assemble,
    gray_to_l,
    lab_to_rgb,
    rgb_to_lab,
)

# independent scalar pipeline (math-library arithmetic only), used to derive
# the frozen expectations below
_M = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
]
_WN = [sum(row) for row in _M]


def _srgb_to_lab_scalar(r8, g8, b8):
    def lin(c):
        c = c / 255.0
        return ((c + 0.055) / 1.055) ** 2.4 if c > 0.04045 else c / 12.92

    rl, gl, bl = lin(r8), lin(g8), lin(b8)
    xyz = [m[0] * rl + m[1] * gl + m[2] * bl for m in _M]
    d = 6.0 / 29.0

    def f(t):
        return t ** (1.0 / 3.0) if t > d**3 else t / (3 * d * d) + 4.0 / 29.0

    fx, fy, fz = (f(v / w) for v, w in zip(xyz, _WN))
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


# value produced by the scalar pipeline above for (119, 119, 119)
GRAY119_L = 50.034438792538225
# reference pipeline with clipping for L=100, a=100, b=0
L100_A100_RGB = (255, 155, 255)


def test_white_reference():
    lab = rgb_to_lab(np.full((2, 2, 3), 255, dtype=np.uint8))
    assert abs(lab.l[0, 0, 0] - 100.0) < 0.01
    assert np.all(np.abs(lab.ab) < 0.01)


def test_black():
    lab = rgb_to_lab(np.zeros((2, 2, 3), dtype=np.uint8))
    assert abs(lab.l[0, 0, 0]) < 0.01
    assert np.all(np.abs(lab.ab) < 0.01)


def test_mid_gray_matches_scalar_pipeline():
    oracle = _srgb_to_lab_scalar(119, 119, 119)
    assert oracle[0] == pytest.approx(GRAY119_L, abs=1e-9)
    lab = rgb_to_lab(np.full((1, 1, 3), 119, dtype=np.uint8))
    assert lab.l[0, 0, 0] == pytest.approx(GRAY119_L, abs=1e-3)
    assert np.all(np.abs(lab.ab) < 0.01)


def test_roundtrip_within_one_count(rng):
    img = rng.integers(0, 256, (48, 64, 3)).astype(np.uint8)
    back = lab_to_rgb(rgb_to_lab(img))
    assert np.abs(back.astype(int) - img.astype(int)).max() <= 1


def test_achromatic_axis():
    img = LabImage(np.full((4, 4, 1), 50.0), np.zeros((4, 4, 2)))
    rgb = lab_to_rgb(img)
    assert np.abs(rgb.astype(int) - rgb[:, :, :1].astype(int)).max() <= 1


def test_out_of_gamut_clips_without_exception():
    img = LabImage(np.full((1, 1, 1), 100.0), np.array([[[100.0, 0.0]]]))
    rgb = lab_to_rgb(img)
    assert rgb.dtype == np.uint8
    assert tuple(rgb[0, 0]) == L100_A100_RGB


def test_rejects_non_finite():
    bad = np.full((2, 2, 3), np.nan)
    with pytest.raises(ColorspaceError):
        rgb_to_lab(bad)


def test_assemble_exact(rng):
    img = rgb_to_lab(rng.integers(0, 256, (8, 8, 3)).astype(np.uint8))
    again = assemble(img.l, img.ab)
    assert np.array_equal(again.l, img.l)
    assert np.array_equal(again.ab, img.ab)


def test_assemble_zeros_is_achromatic():
    l = np.full((8, 8, 1), 60.0, dtype=np.float32)
    img = assemble(l, np.zeros((8, 8, 2), dtype=np.float32))
    rgb = lab_to_rgb(img)
    assert np.abs(rgb.astype(int) - rgb[:, :, :1].astype(int)).max() <= 1


def test_assemble_shape_mismatch():
    with pytest.raises(ColorspaceError):
        assemble(np.zeros((4, 4, 1)), np.zeros((5, 4, 2)))


def test_gray_scaling():
    l = gray_to_l(np.array([[0, 255]], dtype=np.uint8))
    assert l[0, 0, 0] == 0.0
    assert l[0, 1, 0] == 100.0
