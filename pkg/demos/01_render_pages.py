"""Render one page per family and write PNGs plus layout sidecars to demos/out/pages."""
from pathlib import Path

from v2v import assets
from v2v.pages import PageElement, PageSpec, write_page

OUT = Path(__file__).parent / "out" / "pages"

SPECS = {
    "inline-color": PageSpec("inline-color-prompt", [PageElement.text("a"), PageElement.swatch((220, 40, 40)),
                                                     PageElement.text("car")]),
    "counting": PageSpec("counting-display", [PageElement.repeat("O", 5, (30, 30, 200))]),
    "text": PageSpec("rendered-text-page", [PageElement.text("SALE")]),
    "card": PageSpec("color-card", [PageElement.swatch((40, 160, 90))]),
    "pose": PageSpec("structure-reference-page", [PageElement.thumbnail(assets.pose(-60, 10))]),
}

if __name__ == "__main__":
    for name, spec in SPECS.items():
        png, boxes = write_page(spec, OUT / f"{name}.png")
        print(f"{name:13s} {spec.width}x{spec.height} -> {png}")
