"""Builds hidden-state items for the retrieval and alignment diagnostics."""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .pages import PALETTE, PageElement, PageSpec, RenderParams, render_page
from .probe import RetrievalReport, layer_alignment, tokenmax_retrieval
from .raster import RasterImage
from .vlm import MicroVLM

DEFAULT_WORDS = ("apple", "river", "cloud", "tiger", "piano", "lemon", "stone", "horse", "candle", "rocket",
                 "bread", "violin", "forest", "castle", "pencil", "shell")


def text_page(word: str, width: int = 256, height: int = 160) -> RasterImage:
    return render_page(PageSpec("rendered-text-page", [PageElement.text(word)], width, height, RenderParams()))


def swatch_page(rgb, size: int = 64) -> RasterImage:
    return render_page(PageSpec("color-card", [PageElement.swatch(rgb)], size, size))


def page_phrase_states(vlm: MicroVLM, page: RasterImage, phrase: str) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per layer: (image-position states, phrase-token states) from one teacher-forced pass.

    The phrase is placed in the user segment right after the page.
    """
    seq = vlm.build_prefix(page, template=phrase, system_text="")
    out = {}
    for layer, hs in vlm.recompute_all_layers(seq).items():
        out[layer] = (hs.rows("image"), hs.rows("user"))
    return out


def retrieval_items(vlm: MicroVLM, pages: Sequence[RasterImage], phrases: Sequence[str]):
    """Each item pairs page i's image states with phrase i's states (phrase encoded against a blank page)."""
    blank = None
    items: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
    for page, phrase in zip(pages, phrases):
        if blank is None:
            blank = RasterImage(np.full_like(page.pixels, 255))
        img = page_phrase_states(vlm, page, "")
        txt = page_phrase_states(vlm, blank, phrase)
        for layer in img:
            items.setdefault(layer, []).append((img[layer][0], txt[layer][1]))
    return items


def retrieval_diagnostics(vlm: MicroVLM, words: Sequence[str] = DEFAULT_WORDS, layer: int | None = None,
                          k_values=(1, 3)) -> tuple[list[str], list[RetrievalReport], dict[int, float]]:
    """Token-max retrieval on text pages plus its controls, and per-layer alignment."""
    layer = vlm.config.layers if layer is None else layer
    text_items = retrieval_items(vlm, [text_page(w) for w in words], list(words))
    names = [n for n in PALETTE if n != "white"][: len(words)]
    color_items = retrieval_items(vlm, [swatch_page(PALETTE[n]) for n in names], names)
    labels, reports = [], []
    for variant in ("token-max", "mean-pool", "full-token"):
        labels.append(f"text-page {variant}")
        reports.append(tokenmax_retrieval(text_items[layer], k_values, variant))
    labels.append("color-page token-max")
    reports.append(tokenmax_retrieval(color_items[layer], k_values, "token-max"))
    visual = {lay: [a for a, _ in its] for lay, its in text_items.items()}
    text = {lay: [b for _, b in its] for lay, its in text_items.items()}
    return labels, reports, layer_alignment(visual, text)
