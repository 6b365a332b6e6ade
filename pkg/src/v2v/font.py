"""Embedded bitmap font scaled by integer nearest-neighbour replication."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import UnsupportedGlyphError
from .raster import RasterImage, blit_mask

BASE_CELL = 8
BASELINE_ROW = 7  # rows [0, 7) are the glyph body, row 7 the descender
DEFAULT_FONT_SIZE = 32


@dataclass(frozen=True)
class Glyph:
    codepoint: int
    advance: int
    bitmap: np.ndarray  # bool, shape (BASE_CELL, 5)


class GlyphSet:
    def __init__(self, glyphs: dict[int, Glyph]):
        missing = [cp for cp in range(0x20, 0x7F) if cp not in glyphs]
        if missing:
            raise ValueError(f"glyph table lacks codepoints {missing}")
        self.glyphs = glyphs

    @classmethod
    def from_table(cls, text: str) -> GlyphSet:
        glyphs = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cp_hex, adv, *rows = line.split()
            bitmap = np.array([[c == "1" for c in r] for r in rows], dtype=bool)
            if bitmap.shape[0] != BASE_CELL:
                raise ValueError(f"glyph {cp_hex} has {bitmap.shape[0]} rows, expected {BASE_CELL}")
            cp = int(cp_hex, 16)
            glyphs[cp] = Glyph(cp, int(adv), bitmap)
        return cls(glyphs)

    def scale_for(self, font_size: int) -> int:
        if font_size < BASE_CELL or font_size % BASE_CELL:
            raise ValueError(f"font size must be a positive multiple of {BASE_CELL}px, got {font_size}")
        return font_size // BASE_CELL

    def glyph(self, ch: str, position: int | None = None) -> Glyph:
        cp = ord(ch)
        g = self.glyphs.get(cp)
        if g is None:
            raise UnsupportedGlyphError(cp, position)
        return g

    def check(self, text: str) -> None:
        for i, ch in enumerate(text):
            self.glyph(ch, i)

    def advance(self, text: str, font_size: int = DEFAULT_FONT_SIZE) -> int:
        s = self.scale_for(font_size)
        return sum(self.glyph(ch, i).advance for i, ch in enumerate(text)) * s

    def mask(self, ch: str, font_size: int = DEFAULT_FONT_SIZE) -> np.ndarray:
        s = self.scale_for(font_size)
        return np.kron(self.glyph(ch).bitmap, np.ones((s, s), dtype=bool))

    def ink_width(self, ch: str, font_size: int = DEFAULT_FONT_SIZE) -> int:
        cols = np.flatnonzero(self.glyph(ch).bitmap.any(axis=0))
        return 0 if cols.size == 0 else int(cols[-1] + 1) * self.scale_for(font_size)


@lru_cache(maxsize=1)
def default_glyphs() -> GlyphSet:
    text = resources.files("v2v").joinpath("data/glyphs.txt").read_text(encoding="ascii")
    return GlyphSet.from_table(text)


def text_advance(text: str, font_size: int = DEFAULT_FONT_SIZE, glyphs: GlyphSet | None = None) -> int:
    return (glyphs or default_glyphs()).advance(text, font_size)


def draw_text(canvas: RasterImage, text: str, origin: tuple[int, int], font_size: int = DEFAULT_FONT_SIZE,
              color=(0, 0, 0), glyphs: GlyphSet | None = None) -> tuple[RasterImage, int]:
    """Rasterize ``text`` in place with the cell's top-left corner at ``origin``.

    Returns the canvas and the total horizontal advance in pixels. Pixels
    falling outside the canvas are dropped.
    """
    gs = glyphs or default_glyphs()
    gs.check(text)
    s = gs.scale_for(font_size)
    x, y = origin
    pen = 0
    for ch in text:
        g = gs.glyph(ch)
        if g.bitmap.any():
            blit_mask(canvas, gs.mask(ch, font_size), x + pen, y, color)
        pen += g.advance * s
    return canvas, pen
