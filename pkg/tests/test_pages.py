import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import bfs_components
from v2v import assets
from v2v.errors import SpecValidationError, UnknownColorError
from v2v.pages import (PALETTE, PageElement, PageSpec, RenderParams, load_page_spec, named_color, page_spec_from_dict,
                       page_spec_to_dict, render_page, render_page_with_layout, text_band, validate_spec, write_page)
from v2v.raster import read_png

rgbs = st.tuples(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
words = st.text(st.sampled_from("abcdefghijklmnopqrstuvwxyz"), min_size=1, max_size=4)


def uniform_squares(img, rgb, size):
    """Top-left corners of every size x size square whose pixels all equal rgb (summed-area table)."""
    hit = np.all(img.pixels == np.asarray(rgb, dtype=np.uint8), axis=2).astype(np.int64)
    sat = np.pad(hit.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    win = sat[size:, size:] - sat[:-size, size:] - sat[size:, :-size] + sat[:-size, :-size]
    return np.argwhere(win == size * size)


def inline_color(rgb, before="a", after="car"):
    return PageSpec("inline-color-prompt", [PageElement.text(before), PageElement.swatch(rgb), PageElement.text(after)])


def test_inline_red_car_has_exact_swatch_on_baseline():
    img, layout = render_page_with_layout(inline_color((255, 0, 0)))
    box = next(b for b in layout.boxes if b.kind == "color-swatch")
    assert (box.w, box.h) == (28, 28)
    region = img.pixels[box.y:box.y + 28, box.x:box.x + 28]
    assert np.all(region == (255, 0, 0))
    text = next(b for b in layout.boxes if b.kind == "text-run")
    baseline = text.y + 7 * 4  # glyph body is 7 base rows at scale 4
    assert box.y + box.h == baseline


@given(rgbs, words, words)
def test_swatch_fidelity_property(rgb, before, after):
    img = render_page(inline_color(rgb, before, after))
    assert len(uniform_squares(img, rgb, 28)) >= 1


def test_color_card_swatch_region():
    img, layout = render_page_with_layout(PageSpec("color-card", [PageElement.swatch((0, 0, 255))]))
    (b,) = layout.boxes
    assert np.all(img.pixels[b.y:b.y + b.h, b.x:b.x + b.w] == (0, 0, 255))


@given(st.integers(1, 40), st.sampled_from(["O", "X", "#", "@", "*", "o"]), rgbs.filter(lambda c: c != (255, 255, 255)))
def test_count_fidelity_matches_flood_fill(n, glyph, ink):
    img = render_page(PageSpec("counting-display", [PageElement.repeat(glyph, n, ink)]))
    mask = np.any(img.pixels != 255, axis=2)
    assert bfs_components(mask.tolist()) == n


def test_counting_three_copies():
    img = render_page(PageSpec("counting-display", [PageElement.repeat("O", 3)]))
    assert bfs_components(np.any(img.pixels != 255, axis=2).tolist()) == 3


@given(st.integers(60, 400), st.sampled_from([0.15, 0.2, 0.25, 0.3]))
def test_text_band_geometry(height, ratio):
    spec = PageSpec("rendered-text-page", [PageElement.text("SALE now")], 448, height,
                    RenderParams(font_size=8, text_height_ratio=ratio))
    top, band = text_band(spec)
    assert band == int(np.floor(ratio * height + 0.5))
    img = render_page(spec)
    ink = np.argwhere(np.any(img.pixels != 255, axis=2))
    assert ink.size and ink[:, 0].min() >= top and ink[:, 0].max() < top + band


def test_default_text_page_band_is_20_percent():
    spec = PageSpec("rendered-text-page", [PageElement.text("HELLO")])
    assert text_band(spec)[1] == round(0.2 * 448) == 90


def test_validate_examples():
    assert validate_spec(inline_color((1, 2, 3))) == []
    bad = validate_spec(PageSpec("counting-display", [PageElement.repeat("O", 2), PageElement.swatch((0, 0, 0))]))
    assert len(bad) == 1 and bad[0].index == 1
    assert len(validate_spec(PageSpec("color-card", []))) == 1


def test_validate_reports_every_violation():
    spec = PageSpec("inline-color-prompt", [PageElement.cell(1), PageElement.repeat("O", 2)],
                    params=RenderParams(font_size=30, text_height_ratio=1.5))
    found = validate_spec(spec)
    assert len(found) == 4
    with pytest.raises(SpecValidationError) as exc:
        render_page(spec)
    assert len(exc.value.violations) == 4


def test_disconnected_repeat_glyph_is_rejected():
    assert any("connected" in v.message for v in validate_spec(PageSpec("counting-display",
                                                                          [PageElement.repeat('"', 2)])))


def test_inline_overflow_is_a_violation():
    spec = inline_color((0, 0, 0), "a very long line of words", "that cannot fit")
    assert validate_spec(spec)


def test_named_colors():
    assert named_color("red") == (255, 0, 0)
    assert named_color("white") == (255, 255, 255)
    with pytest.raises(UnknownColorError) as exc:
        named_color("crimson")
    assert exc.value.suggestion == "red" and "red" in str(exc.value)
    assert len(PALETTE) == 16


ALL_FAMILIES = [
    PageSpec("color-card", [PageElement.swatch("teal"), PageElement.swatch("olive"), PageElement.text("pick")]),
    PageSpec("object-layout-card", [PageElement.cell(4), PageElement.thumbnail(assets.icon("disc")),
                                    PageElement.cell(0), PageElement.swatch((9, 9, 9))]),
    PageSpec("counting-display", [PageElement.repeat("X", 7, (255, 0, 0)), PageElement.text("count")]),
    inline_color((10, 20, 30)),
    PageSpec("inline-visual-reference", [PageElement.text("a"), PageElement.thumbnail(assets.icon("ring")),
                                         PageElement.text("here")]),
    PageSpec("rendered-text-page", [PageElement.text("HELLO")]),
    PageSpec("style-reference-page", [PageElement.thumbnail(assets.style_swatch("checker")), PageElement.text("x")]),
    PageSpec("structure-reference-page", [PageElement.thumbnail(assets.pose())]),
]


@pytest.mark.parametrize("spec", ALL_FAMILIES, ids=lambda s: s.family)
def test_every_family_renders_deterministically(spec):
    assert validate_spec(spec) == []
    a, b = render_page(spec), render_page(spec)
    assert a == b and (a.width, a.height) == (spec.width, spec.height)


@pytest.mark.parametrize("spec", ALL_FAMILIES, ids=lambda s: s.family)
def test_json_roundtrip(spec, tmp_path):
    d = page_spec_to_dict(spec)
    again = page_spec_from_dict(json.loads(json.dumps(d)))
    assert render_page(again) == render_page(spec)
    (tmp_path / "s.json").write_text(json.dumps(d))
    assert render_page(load_page_spec(tmp_path / "s.json")) == render_page(spec)


def test_reference_image_is_embedded_verbatim():
    ref = assets.sketch("house")
    img, layout = render_page_with_layout(PageSpec("structure-reference-page", [PageElement.thumbnail(ref)]))
    (b,) = layout.boxes
    assert np.array_equal(img.pixels[b.y:b.y + b.h, b.x:b.x + b.w], ref.pixels)


def test_inline_thumbnail_is_72px():
    _, layout = render_page_with_layout(ALL_FAMILIES[4])
    b = next(b for b in layout.boxes if b.kind == "image-thumbnail")
    assert (b.w, b.h) == (72, 72)


def test_write_page_with_sidecar(tmp_path):
    png, side = write_page(inline_color((255, 0, 0)), tmp_path / "p.png")
    boxes = json.loads(side.read_text())["boxes"]
    sw = next(b for b in boxes if b["kind"] == "color-swatch")
    assert sw["rgb"] == [255, 0, 0] and sw["w"] == 28
    assert read_png(png) == render_page(inline_color((255, 0, 0)))
    first = png.read_bytes()
    write_page(inline_color((255, 0, 0)), png)
    assert png.read_bytes() == first


def test_thumbnail_from_path(tmp_path):
    from v2v.raster import write_png
    write_png(assets.icon("cross"), tmp_path / "icon.png")
    (tmp_path / "s.json").write_text(json.dumps({"family": "inline-visual-reference", "elements": [
        {"kind": "text-run", "text": "a"}, {"kind": "image-thumbnail", "path": "icon.png"}]}))
    spec = load_page_spec(tmp_path / "s.json")
    assert spec.elements[1].payload == assets.icon("cross")
