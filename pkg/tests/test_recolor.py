import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hairmatte.recolor import RecolorError, luminance, parse_color, recolor


def test_zero_matte_is_bit_exact():
    img = np.random.default_rng(0).uniform(size=(3, 8, 8)).astype(np.float32)
    out = recolor(img, np.zeros((8, 8)), parse_color("#ff0000"))
    assert out.tobytes() == img.tobytes()


def test_gray_pixel_turns_red_with_same_luminance():
    img = np.full((3, 1, 1), 0.5)
    out = recolor(img, np.ones((1, 1)), np.array([1.0, 0.0, 0.0]))
    r, g, b = out[:, 0, 0]
    assert r > g and r > b and g == pytest.approx(b)
    assert luminance(out)[0, 0] == pytest.approx(0.5, abs=1e-3)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), color=st.tuples(*[st.floats(0, 1)] * 3))
def test_luminance_preserved_everywhere(seed, color):
    rng = np.random.default_rng(seed)
    img = rng.uniform(size=(3, 6, 6))
    matte = rng.uniform(size=(6, 6))
    out = recolor(img, matte, np.array(color))
    np.testing.assert_allclose(luminance(out), luminance(img), atol=1e-3)
    assert out.min() >= 0 and out.max() <= 1


def test_partial_matte_blends_linearly():
    img = np.full((3, 1, 2), 0.4)
    full = recolor(img, np.array([[1.0, 1.0]]), np.array([0.2, 0.3, 0.9]))
    half = recolor(img, np.array([[0.5, 0.5]]), np.array([0.2, 0.3, 0.9]))
    np.testing.assert_allclose(half, 0.5 * img + 0.5 * full, atol=1e-12)


def test_size_mismatch():
    with pytest.raises(RecolorError, match="size"):
        recolor(np.zeros((3, 4, 4)), np.zeros((5, 5)), np.ones(3))


def test_matte_range_checked():
    with pytest.raises(RecolorError):
        recolor(np.zeros((3, 2, 2)), np.full((2, 2), 1.5), np.ones(3))


@pytest.mark.parametrize("text,expected", [("#ff8000", [1.0, 128 / 255, 0.0]), ("0.1,0.2,0.3", [0.1, 0.2, 0.3])])
def test_parse_color(text, expected):
    np.testing.assert_allclose(parse_color(text), expected)


@pytest.mark.parametrize("text", ["red", "#12345", "1,2", "0,0,2"])
def test_parse_color_rejects(text):
    with pytest.raises(RecolorError):
        parse_color(text)
