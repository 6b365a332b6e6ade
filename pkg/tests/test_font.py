from importlib import resources

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import table_advance
from v2v.errors import UnsupportedGlyphError
from v2v.font import default_glyphs, draw_text, text_advance
from v2v.raster import new_canvas

ascii_text = st.text(st.characters(min_codepoint=0x20, max_codepoint=0x7E), max_size=12)
TABLE = resources.files("v2v").joinpath("data/glyphs.txt").read_text()


def test_every_printable_ascii_has_a_glyph():
    gs = default_glyphs()
    for cp in range(0x20, 0x7F):
        g = gs.glyph(chr(cp))
        assert g.bitmap.shape == (8, 5) and g.advance >= 1


def test_empty_string_is_a_no_op():
    canvas = new_canvas(20, 20)
    before = canvas.copy()
    _, adv = draw_text(canvas, "", (3, 3), 32, (0, 0, 0))
    assert adv == 0 and canvas == before


def test_advance_red_car_matches_table_sum():
    assert text_advance("red car", 32) == table_advance(TABLE, "red car", 32)
    assert text_advance("AA", 32) == 2 * text_advance("A", 32)


@given(ascii_text, ascii_text, st.sampled_from([8, 16, 32, 40]))
def test_advance_is_additive(a, b, size):
    assert text_advance(a + b, size) == text_advance(a, size) + text_advance(b, size)
    assert text_advance(a, size) == table_advance(TABLE, a, size)


def test_non_ascii_names_codepoint():
    with pytest.raises(UnsupportedGlyphError) as exc:
        draw_text(new_canvas(50, 50), "café", (0, 0), 32, (0, 0, 0))
    assert exc.value.codepoint == 0xE9 and exc.value.position == 3
    assert "U+00E9" in str(exc.value)


@pytest.mark.parametrize("size", [0, 12, 44])
def test_font_size_must_be_multiple_of_cell(size):
    with pytest.raises(ValueError):
        text_advance("a", size)


@given(ascii_text, st.integers(-60, 60), st.integers(-60, 60))
def test_draw_text_deterministic_and_clipped(text, x, y):
    a, adv_a = draw_text(new_canvas(40, 30), text, (x, y), 16, (200, 0, 0))
    b, adv_b = draw_text(new_canvas(40, 30), text, (x, y), 16, (200, 0, 0))
    assert a == b and adv_a == adv_b
    assert a.pixels.shape == (30, 40, 3)
    colors = {tuple(c) for c in np.unique(a.pixels.reshape(-1, 3), axis=0).tolist()}
    assert colors <= {(255, 255, 255), (200, 0, 0)}


def test_glyph_ink_scales_with_font_size():
    a, _ = draw_text(new_canvas(64, 64), "H", (0, 0), 8, (0, 0, 0))
    b, _ = draw_text(new_canvas(64, 64), "H", (0, 0), 32, (0, 0, 0))
    ink = lambda im: int(np.all(im.pixels == 0, axis=2).sum())  # noqa: E731
    assert ink(b) == 16 * ink(a)
