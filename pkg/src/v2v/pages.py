"""Declarative visual pages: validation, layout and deterministic rendering."""
from __future__ import annotations

import base64
import difflib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import ndimage

from . import assets
from .errors import SpecValidationError, UnknownColorError, UnsupportedGlyphError
from .font import BASE_CELL, BASELINE_ROW, default_glyphs, draw_text
from .raster import RGB, RasterImage, as_rgb, blit_mask, fill_rect, new_canvas, paste, read_png, resize_nearest

FAMILIES = (
    "color-card",
    "object-layout-card",
    "counting-display",
    "inline-color-prompt",
    "inline-visual-reference",
    "rendered-text-page",
    "style-reference-page",
    "structure-reference-page",
)
KINDS = ("text-run", "color-swatch", "image-thumbnail", "grid-cell", "repeat-glyph")

LEGAL_KINDS = {
    "color-card": {"color-swatch", "text-run"},
    "object-layout-card": {"grid-cell", "image-thumbnail", "color-swatch", "text-run"},
    "counting-display": {"repeat-glyph", "text-run"},
    "inline-color-prompt": {"text-run", "color-swatch"},
    "inline-visual-reference": {"text-run", "image-thumbnail"},
    "rendered-text-page": {"text-run"},
    "style-reference-page": {"image-thumbnail", "text-run"},
    "structure-reference-page": {"image-thumbnail", "text-run"},
}
INLINE_FAMILIES = ("inline-color-prompt", "inline-visual-reference")
REFERENCE_FAMILIES = ("style-reference-page", "structure-reference-page")

DEFAULT_CARD_CANVAS = (448, 448)
DEFAULT_INLINE_CANVAS = (448, 112)
MARGIN = 16
INLINE_MARGIN = 8
CELL_PAD = 8
GRID = 3
BACKGROUND: RGB = (255, 255, 255)
INK: RGB = (0, 0, 0)

PALETTE: dict[str, RGB] = {
    "black": (0, 0, 0),
    "silver": (192, 192, 192),
    "gray": (128, 128, 128),
    "white": (255, 255, 255),
    "maroon": (128, 0, 0),
    "red": (255, 0, 0),
    "purple": (128, 0, 128),
    "fuchsia": (255, 0, 255),
    "green": (0, 128, 0),
    "lime": (0, 255, 0),
    "olive": (128, 128, 0),
    "yellow": (255, 255, 0),
    "navy": (0, 0, 128),
    "blue": (0, 0, 255),
    "teal": (0, 128, 128),
    "aqua": (0, 255, 255),
}


def named_color(name: str) -> RGB:
    key = name.strip().lower()
    if key in PALETTE:
        return PALETTE[key]
    raise UnknownColorError(name, _nearest_palette_name(key))


def _nearest_palette_name(key: str) -> str:
    from PIL import ImageColor

    try:
        rgb = ImageColor.getrgb(key)[:3]
    except ValueError:
        match = difflib.get_close_matches(key, list(PALETTE), n=1, cutoff=0.0)
        return match[0] if match else "black"
    return min(PALETTE, key=lambda n: sum((a - b) ** 2 for a, b in zip(PALETTE[n], rgb)))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class RenderParams:
    font_size: int = 32
    text_height_ratio: float = 0.20
    inline_swatch_size: int = 28
    inline_thumbnail_size: int = 72

    def violations(self) -> list[str]:
        out = []
        if not 0 < self.text_height_ratio < 1:
            out.append(f"text_height_ratio must lie in (0, 1), got {self.text_height_ratio}")
        for name in ("font_size", "inline_swatch_size", "inline_thumbnail_size"):
            if getattr(self, name) < 8:
                out.append(f"{name} must be at least 8px, got {getattr(self, name)}")
        if self.font_size % BASE_CELL:
            out.append(f"font_size must be a multiple of {BASE_CELL}px, got {self.font_size}")
        return out


@dataclass
class PageElement:
    """One item on a page.

    ``payload`` by kind: text-run -> str, color-swatch -> rgb triple,
    image-thumbnail -> RasterImage, grid-cell -> int cell index,
    repeat-glyph -> (glyph character, count). ``color`` is the ink used by
    text-run and repeat-glyph. ``source`` keeps the JSON descriptor an image
    was loaded from, so specs serialize back losslessly.
    """

    kind: str
    payload: Any
    color: RGB = INK
    source: dict | None = field(default=None, repr=False, compare=False)

    @classmethod
    def text(cls, text: str, color=INK) -> PageElement:
        return cls("text-run", text, as_rgb(color))

    @classmethod
    def swatch(cls, rgb) -> PageElement:
        return cls("color-swatch", named_color(rgb) if isinstance(rgb, str) else tuple(rgb))

    @classmethod
    def thumbnail(cls, image: RasterImage, source: dict | None = None) -> PageElement:
        return cls("image-thumbnail", image, source=source)

    @classmethod
    def cell(cls, index: int) -> PageElement:
        return cls("grid-cell", index)

    @classmethod
    def repeat(cls, glyph: str, count: int, color=INK) -> PageElement:
        return cls("repeat-glyph", (glyph, count), as_rgb(color))


@dataclass
class PageSpec:
    family: str
    elements: list[PageElement]
    width: int | None = None
    height: int | None = None
    params: RenderParams = field(default_factory=RenderParams)

    def __post_init__(self):
        w, h = DEFAULT_INLINE_CANVAS if self.family in INLINE_FAMILIES else DEFAULT_CARD_CANVAS
        self.width = w if self.width is None else self.width
        self.height = h if self.height is None else self.height


@dataclass(frozen=True)
class Violation:
    index: int | None
    message: str

    def __str__(self) -> str:
        return self.message if self.index is None else f"element {self.index}: {self.message}"


@dataclass(frozen=True)
class Box:
    element: int
    kind: str
    x: int
    y: int
    w: int
    h: int
    rgb: RGB | None = None

    def to_dict(self) -> dict:
        d = {"element": self.element, "kind": self.kind, "x": self.x, "y": self.y, "w": self.w, "h": self.h}
        if self.rgb is not None:
            d["rgb"] = list(self.rgb)
        return d


@dataclass
class Layout:
    boxes: list[Box] = field(default_factory=list)
    text_band: tuple[int, int] | None = None  # (top, height) for rendered-text pages

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"boxes": [b.to_dict() for b in self.boxes]}
        if self.text_band is not None:
            d["text_band"] = {"top": self.text_band[0], "height": self.text_band[1]}
        return d


# -- validation ---------------------------------------------------------------

def _payload_violation(el: PageElement) -> str | None:
    p = el.payload
    if el.kind == "text-run":
        if not isinstance(p, str):
            return "text-run payload must be a string"
        try:
            default_glyphs().check(p)
        except UnsupportedGlyphError as exc:
            return str(exc)
    elif el.kind == "color-swatch":
        try:
            as_rgb(p)
        except (TypeError, ValueError) as exc:
            return f"invalid swatch rgb: {exc}"
    elif el.kind == "image-thumbnail":
        if not isinstance(p, RasterImage):
            return "image-thumbnail payload must be a RasterImage"
    elif el.kind == "grid-cell":
        if not isinstance(p, int) or not 0 <= p < GRID * GRID:
            return f"grid-cell index must be an int in [0, {GRID * GRID}), got {p!r}"
    elif el.kind == "repeat-glyph":
        if not (isinstance(p, tuple | list) and len(p) == 2):
            return "repeat-glyph payload must be (glyph, count)"
        glyph, count = p
        if not isinstance(count, int) or count < 1:
            return f"repeat-glyph count must be >= 1, got {count!r}"
        if not isinstance(glyph, str) or len(glyph) != 1:
            return f"repeat-glyph glyph must be a single character, got {glyph!r}"
        try:
            bitmap = default_glyphs().glyph(glyph).bitmap
        except UnsupportedGlyphError as exc:
            return str(exc)
        _, n = ndimage.label(bitmap, structure=np.ones((3, 3), dtype=bool))
        if n != 1:
            return f"repeat-glyph mark {glyph!r} is not a single connected shape"
    else:
        return f"unknown element kind {el.kind!r}"
    return None


def validate_spec(spec: PageSpec) -> list[Violation]:
    """Return every violation found; an empty list means the spec is renderable."""
    out: list[Violation] = []
    if spec.family not in FAMILIES:
        return [Violation(None, f"unknown family {spec.family!r}")]
    if not (1 <= spec.width <= 4096 and 1 <= spec.height <= 4096):
        out.append(Violation(None, f"canvas {spec.width}x{spec.height} out of range"))
    out += [Violation(None, m) for m in spec.params.violations()]
    if not spec.elements:
        out.append(Violation(None, "page has no elements"))
    legal = LEGAL_KINDS[spec.family]
    payload_ok = True
    for i, el in enumerate(spec.elements):
        if el.kind not in legal:
            out.append(Violation(i, f"{el.kind} is not allowed on a {spec.family} page (allowed: {sorted(legal)})"))
            payload_ok = False
            continue
        msg = _payload_violation(el)
        if msg:
            out.append(Violation(i, msg))
            payload_ok = False
    if out or not payload_ok:
        return out
    # geometry checks need well-formed payloads
    try:
        _layout(spec, dry=True)
    except _LayoutError as exc:
        out.append(Violation(exc.index, exc.message))
    return out


class _LayoutError(Exception):
    def __init__(self, index, message):
        self.index, self.message = index, message


# -- rendering ----------------------------------------------------------------

def render_page(spec: PageSpec) -> RasterImage:
    return render_page_with_layout(spec)[0]


def render_page_with_layout(spec: PageSpec) -> tuple[RasterImage, Layout]:
    violations = validate_spec(spec)
    if violations:
        raise SpecValidationError(violations)
    return _layout(spec, dry=False)


def _caption(spec: PageSpec) -> str:
    return " ".join(e.payload.strip() for e in spec.elements if e.kind == "text-run" and e.payload.strip())


def _draw_caption(img: RasterImage | None, spec: PageSpec, text: str, dry: bool) -> int:
    """Center a one-line caption at the bottom; returns the height it reserves."""
    if not text:
        return 0
    fs = spec.params.font_size
    adv = default_glyphs().advance(text, fs)
    if adv > spec.width - 2 * MARGIN:
        raise _LayoutError(None, f"caption {text!r} is {adv}px wide, page allows {spec.width - 2 * MARGIN}px")
    band = fs + MARGIN
    if not dry:
        draw_text(img, text, ((spec.width - adv) // 2, spec.height - band), fs, INK)
    return band


def _layout(spec: PageSpec, dry: bool) -> tuple[RasterImage | None, Layout]:
    img = None if dry else new_canvas(spec.width, spec.height, BACKGROUND)
    layout = Layout()
    fam = spec.family
    if fam == "color-card":
        _color_card(img, spec, layout, dry)
    elif fam == "object-layout-card":
        _object_layout(img, spec, layout, dry)
    elif fam == "counting-display":
        _counting(img, spec, layout, dry)
    elif fam in INLINE_FAMILIES:
        _inline(img, spec, layout, dry)
    elif fam == "rendered-text-page":
        _text_page(img, spec, layout, dry)
    else:
        _reference(img, spec, layout, dry)
    return img, layout


def _color_card(img, spec, layout, dry):
    cap = _draw_caption(img, spec, _caption(spec), dry)
    swatches = [(i, e) for i, e in enumerate(spec.elements) if e.kind == "color-swatch"]
    if not swatches:
        raise _LayoutError(None, "color-card needs at least one color-swatch")
    top, bottom = MARGIN, spec.height - MARGIN - cap
    k = len(swatches)
    col_w = (spec.width - 2 * MARGIN - (k - 1) * MARGIN) // k
    if col_w < 1 or bottom - top < 1:
        raise _LayoutError(None, f"{k} swatches do not fit a {spec.width}x{spec.height} card")
    for j, (i, el) in enumerate(swatches):
        x = MARGIN + j * (col_w + MARGIN)
        rgb = as_rgb(el.payload)
        if not dry:
            fill_rect(img, x, top, col_w, bottom - top, rgb)
        layout.boxes.append(Box(i, el.kind, x, top, col_w, bottom - top, rgb))


def _object_layout(img, spec, layout, dry):
    cap = _draw_caption(img, spec, _caption(spec), dry)
    region_w = spec.width - 2 * MARGIN
    region_h = spec.height - 2 * MARGIN - cap
    cell_w, cell_h = region_w // GRID, region_h // GRID
    side = min(cell_w, cell_h) - 2 * CELL_PAD
    if side < 1:
        raise _LayoutError(None, "grid cells are too small for this canvas")
    used: set[int] = set()
    pending: tuple[int, int] | None = None
    for i, el in enumerate(spec.elements):
        if el.kind == "grid-cell":
            if pending is not None:
                raise _LayoutError(pending[0], "grid-cell is not followed by a thumbnail or swatch")
            pending = (i, el.payload)
            continue
        if el.kind == "text-run":
            continue
        if pending is not None:
            cell = pending[1]
            pending = None
        else:
            free = [c for c in range(GRID * GRID) if c not in used]
            if not free:
                raise _LayoutError(i, "more placed items than grid cells")
            cell = free[0]
        if cell in used:
            raise _LayoutError(i, f"grid cell {cell} is already occupied")
        used.add(cell)
        r, c = divmod(cell, GRID)
        x = MARGIN + c * cell_w + (cell_w - side) // 2
        y = MARGIN + r * cell_h + (cell_h - side) // 2
        rgb = None
        if el.kind == "color-swatch":
            rgb = as_rgb(el.payload)
            if not dry:
                fill_rect(img, x, y, side, side, rgb)
        elif not dry:
            paste(img, resize_nearest(el.payload, side, side), x, y)
        layout.boxes.append(Box(i, el.kind, x, y, side, side, rgb))
    if pending is not None:
        raise _LayoutError(pending[0], "grid-cell is not followed by a thumbnail or swatch")


def _counting(img, spec, layout, dry):
    gs = default_glyphs()
    fs = spec.params.font_size
    s = fs // BASE_CELL
    cap = _draw_caption(img, spec, _caption(spec), dry)
    avail_w = spec.width - 2 * MARGIN
    rows: list[list[tuple[int, PageElement]]] = []
    for i, el in enumerate(spec.elements):
        if el.kind != "repeat-glyph":
            continue
        glyph, count = el.payload
        ink_w = gs.ink_width(glyph, fs)
        step = 2 * ink_w  # one ink width of gap keeps marks disjoint
        per_row = max(1, (avail_w + ink_w) // step)
        for start in range(0, count, per_row):
            rows.append([(i, el)] * min(per_row, count - start))
    if not rows:
        raise _LayoutError(None, "counting-display needs a repeat-glyph element")
    row_h = fs + 2 * s
    block_h = len(rows) * row_h - 2 * s
    avail_h = spec.height - 2 * MARGIN - cap
    if block_h > avail_h:
        raise _LayoutError(None, f"{len(rows)} mark rows need {block_h}px, page allows {avail_h}px")
    y = MARGIN + (avail_h - block_h) // 2
    for row in rows:
        glyph = row[0][1].payload[0]
        ink_w = gs.ink_width(glyph, fs)
        row_w = len(row) * 2 * ink_w - ink_w
        x = MARGIN + (avail_w - row_w) // 2
        for i, el in row:
            if not dry:
                blit_mask(img, gs.mask(glyph, fs), x, y, el.color)
            layout.boxes.append(Box(i, el.kind, x, y, ink_w, fs))
            x += 2 * ink_w
        y += row_h


def _inline(img, spec, layout, dry):
    gs = default_glyphs()
    p = spec.params
    fs = p.font_size
    s = fs // BASE_CELL
    body = BASELINE_ROW * s
    items = []
    for i, el in enumerate(spec.elements):
        if el.kind == "text-run":
            text = el.payload.strip()
            if text:
                items.append((i, el, gs.advance(text, fs), body, text))
        elif el.kind == "color-swatch":
            items.append((i, el, p.inline_swatch_size, p.inline_swatch_size, None))
        else:
            items.append((i, el, p.inline_thumbnail_size, p.inline_thumbnail_size, None))
    gap = gs.advance(" ", fs)
    total_w = sum(it[2] for it in items) + gap * max(len(items) - 1, 0)
    if total_w > spec.width - 2 * INLINE_MARGIN:
        raise _LayoutError(None, f"inline line is {total_w}px wide, page allows {spec.width - 2 * INLINE_MARGIN}px")
    above = max([body] + [it[3] for it in items])
    line_h = above + s  # descender row below the baseline
    if line_h > spec.height:
        raise _LayoutError(None, f"inline line needs {line_h}px of height, page has {spec.height}px")
    baseline = (spec.height - line_h) // 2 + above
    x = INLINE_MARGIN
    for i, el, w, h, text in items:
        if text is not None:
            if not dry:
                draw_text(img, text, (x, baseline - body), fs, el.color)
            layout.boxes.append(Box(i, el.kind, x, baseline - body, w, fs))
        elif el.kind == "color-swatch":
            rgb = as_rgb(el.payload)
            if not dry:
                fill_rect(img, x, baseline - h, w, h, rgb)
            layout.boxes.append(Box(i, el.kind, x, baseline - h, w, h, rgb))
        else:
            if not dry:
                paste(img, resize_nearest(el.payload, w, h), x, baseline - h)
            layout.boxes.append(Box(i, el.kind, x, baseline - h, w, h))
        x += w + gap


def _wrap(text: str, width: int, fs: int) -> list[str]:
    gs = default_glyphs()
    lines: list[str] = []
    cur = ""
    for word in text.split():
        trial = f"{cur} {word}" if cur else word
        if cur and gs.advance(trial, fs) > width:
            lines.append(cur)
            cur = word
        else:
            cur = trial
    if cur:
        lines.append(cur)
    return lines


def text_band(spec: PageSpec) -> tuple[int, int]:
    band_h = round_half_up(spec.params.text_height_ratio * spec.height)
    return (spec.height - band_h) // 2, band_h


def _text_page(img, spec, layout, dry):
    fs = spec.params.font_size
    top, band_h = text_band(spec)
    layout.text_band = (top, band_h)
    if fs > band_h:
        raise _LayoutError(None, f"font cell of {fs}px exceeds the {band_h}px text band")
    lines = _wrap(_caption(spec), spec.width - 2 * MARGIN, fs)
    if dry:
        return
    # draw on a band-sized strip so nothing can leak outside the band
    strip = new_canvas(spec.width, band_h, BACKGROUND)
    n_fit = max(1, band_h // fs)
    shown = lines[:n_fit]
    y = (band_h - len(shown) * fs) // 2
    color = next(e.color for e in spec.elements if e.kind == "text-run")
    gs = default_glyphs()
    for line in shown:
        x = (spec.width - gs.advance(line, fs)) // 2
        draw_text(strip, line, (max(x, MARGIN), y), fs, color)
        y += fs
    paste(img, strip, 0, top)


def _reference(img, spec, layout, dry):
    images = [(i, e) for i, e in enumerate(spec.elements) if e.kind == "image-thumbnail"]
    texts = [i for i, e in enumerate(spec.elements) if e.kind == "text-run"]
    if len(images) != 1:
        raise _LayoutError(None, f"{spec.family} needs exactly one image-thumbnail, got {len(images)}")
    if len(texts) > 1:
        raise _LayoutError(texts[1], "reference pages carry at most one caption line")
    cap = _draw_caption(img, spec, _caption(spec), dry)
    i, el = images[0]
    ref = el.payload
    avail_h = spec.height - cap
    if ref.width > spec.width or ref.height > avail_h:
        raise _LayoutError(i, f"reference image {ref.width}x{ref.height} does not fit {spec.width}x{avail_h}")
    x, y = (spec.width - ref.width) // 2, (avail_h - ref.height) // 2
    if not dry:
        paste(img, ref, x, y)
    layout.boxes.append(Box(i, el.kind, x, y, ref.width, ref.height))


# -- JSON -----------------------------------------------------------------------

def _element_from_dict(d: dict, base_dir: Path | None) -> PageElement:
    kind = d.get("kind")
    color = d.get("ink", INK)
    color = named_color(color) if isinstance(color, str) else tuple(color)
    if kind == "text-run":
        return PageElement(kind, d["text"], color)
    if kind == "color-swatch":
        rgb = d.get("rgb", d.get("color"))
        return PageElement(kind, named_color(rgb) if isinstance(rgb, str) else tuple(rgb))
    if kind == "image-thumbnail":
        if "asset" in d:
            src = {"asset": d["asset"]}
            img = assets.from_descriptor(d["asset"])
        elif "path" in d:
            src = {"path": d["path"]}
            p = Path(d["path"])
            img = read_png(p if p.is_absolute() or base_dir is None else base_dir / p)
        elif "png_base64" in d:
            src = {"png_base64": d["png_base64"]}
            img = read_png(io.BytesIO(base64.b64decode(d["png_base64"])))
        else:
            raise ValueError("image-thumbnail needs one of 'asset', 'path', 'png_base64'")
        return PageElement(kind, img, source=src)
    if kind == "grid-cell":
        return PageElement(kind, d["cell"])
    if kind == "repeat-glyph":
        return PageElement(kind, (d["glyph"], d["count"]), color)
    return PageElement(str(kind), d.get("payload"))


def page_spec_from_dict(d: dict, base_dir: str | Path | None = None) -> PageSpec:
    canvas = d.get("canvas", {})
    params = RenderParams(**d.get("params", {}))
    base = Path(base_dir) if base_dir is not None else None
    return PageSpec(d["family"], [_element_from_dict(e, base) for e in d.get("elements", [])],
                    canvas.get("width"), canvas.get("height"), params)


def load_page_spec(path: str | Path) -> PageSpec:
    path = Path(path)
    return page_spec_from_dict(json.loads(path.read_text()), path.parent)


def page_spec_to_dict(spec: PageSpec) -> dict:
    from .raster import encode_png

    elements = []
    for el in spec.elements:
        if el.kind == "text-run":
            d = {"kind": el.kind, "text": el.payload}
        elif el.kind == "color-swatch":
            d = {"kind": el.kind, "rgb": list(el.payload)}
        elif el.kind == "image-thumbnail":
            src = el.source or {"png_base64": base64.b64encode(encode_png(el.payload)).decode("ascii")}
            d = {"kind": el.kind, **src}
        elif el.kind == "grid-cell":
            d = {"kind": el.kind, "cell": el.payload}
        else:
            d = {"kind": el.kind, "glyph": el.payload[0], "count": el.payload[1]}
        if el.kind in ("text-run", "repeat-glyph") and tuple(el.color) != INK:
            d["ink"] = list(el.color)
        elements.append(d)
    p = spec.params
    return {
        "family": spec.family,
        "canvas": {"width": spec.width, "height": spec.height},
        "params": {"font_size": p.font_size, "text_height_ratio": p.text_height_ratio,
                   "inline_swatch_size": p.inline_swatch_size, "inline_thumbnail_size": p.inline_thumbnail_size},
        "elements": elements,
    }


def write_page(spec: PageSpec, png_path: str | Path) -> tuple[Path, Path]:
    """Render to ``png_path`` and write the layout sidecar next to it."""
    from .raster import write_png

    img, layout = render_page_with_layout(spec)
    png_path = Path(png_path)
    png_path.parent.mkdir(parents=True, exist_ok=True)
    write_png(img, png_path)
    sidecar = png_path.with_suffix(".boxes.json")
    sidecar.write_text(json.dumps({"family": spec.family, "width": spec.width, "height": spec.height,
                                   **layout.to_dict()}, indent=2, sort_keys=True) + "\n")
    return png_path, sidecar
