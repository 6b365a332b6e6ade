"""RGB8 image buffers and deterministic PNG emission."""
from __future__ import annotations

import struct
import zlib
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError

MAX_DIM = 16384

RGB = tuple[int, int, int]


def as_rgb(color: Sequence[int]) -> RGB:
    if len(color) != 3:
        raise ValueError(f"rgb needs 3 channels, got {len(color)}")
    out = tuple(int(c) for c in color)
    if any(c < 0 or c > 255 for c in out):
        raise ValueError(f"rgb channels must lie in [0, 255], got {out}")
    return out  # type: ignore[return-value]


@dataclass(eq=False)
class RasterImage:
    """Row-major RGB8 pixel grid. ``pixels`` has shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionError(f"pixels must have shape (H, W, 3), got {px.shape}")
        if px.dtype != np.uint8:
            raise DimensionError(f"pixels must be uint8, got {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise DimensionError(f"empty image {px.shape[1]}x{px.shape[0]}")
        self.pixels = np.ascontiguousarray(px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def copy(self) -> RasterImage:
        return RasterImage(self.pixels.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __repr__(self) -> str:
        return f"RasterImage({self.width}x{self.height})"


def new_canvas(width: int, height: int, background: Sequence[int] = (255, 255, 255)) -> RasterImage:
    if not (1 <= width <= MAX_DIM and 1 <= height <= MAX_DIM):
        raise DimensionError(f"canvas dimensions must lie in [1, {MAX_DIM}], got {width}x{height}")
    px = np.empty((height, width, 3), dtype=np.uint8)
    px[:, :] = as_rgb(background)
    return RasterImage(px)


def _clip_box(image: RasterImage, x: int, y: int, w: int, h: int):
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, image.width), min(y + h, image.height)
    if x0 >= x1 or y0 >= y1:
        return None
    return x0, y0, x1, y1


def fill_rect(image: RasterImage, x: int, y: int, w: int, h: int, color: Sequence[int]) -> RasterImage:
    """Fill a rectangle in place, clipped to the canvas."""
    box = _clip_box(image, x, y, w, h)
    if box is not None:
        x0, y0, x1, y1 = box
        image.pixels[y0:y1, x0:x1] = as_rgb(color)
    return image


def blit_mask(image: RasterImage, mask: np.ndarray, x: int, y: int, color: Sequence[int]) -> RasterImage:
    """Paint ``color`` wherever the boolean ``mask`` is set, with its top-left at (x, y)."""
    h, w = mask.shape
    box = _clip_box(image, x, y, w, h)
    if box is not None:
        x0, y0, x1, y1 = box
        sub = mask[y0 - y:y1 - y, x0 - x:x1 - x]
        image.pixels[y0:y1, x0:x1][sub] = as_rgb(color)
    return image


def paste(image: RasterImage, src: RasterImage, x: int, y: int) -> RasterImage:
    box = _clip_box(image, x, y, src.width, src.height)
    if box is not None:
        x0, y0, x1, y1 = box
        image.pixels[y0:y1, x0:x1] = src.pixels[y0 - y:y1 - y, x0 - x:x1 - x]
    return image


def resize_nearest(image: RasterImage, width: int, height: int) -> RasterImage:
    if width < 1 or height < 1:
        raise DimensionError(f"target size must be positive, got {width}x{height}")
    # integer arithmetic keeps the sampling grid platform independent
    ys = (np.arange(height) * image.height) // height
    xs = (np.arange(width) * image.width) // width
    return RasterImage(image.pixels[ys][:, xs])


def draw_line(image: RasterImage, p0, p1, color: Sequence[int], thickness: int = 1) -> RasterImage:
    """Bresenham line with a square pen, clipped to the canvas."""
    (x0, y0), (x1, y1) = (int(round(p0[0])), int(round(p0[1]))), (int(round(p1[0])), int(round(p1[1])))
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx, sy = (1 if x0 < x1 else -1), (1 if y0 < y1 else -1)
    err = dx + dy
    r0 = thickness // 2
    while True:
        fill_rect(image, x0 - r0, y0 - r0, thickness, thickness, color)
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return image


def fill_disc(image: RasterImage, cx: float, cy: float, radius: float, color: Sequence[int]) -> RasterImage:
    yy, xx = np.mgrid[0:image.height, 0:image.width]
    mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    image.pixels[mask] = as_rgb(color)
    return image


def count_components(image: RasterImage, background: Sequence[int] | None = None,
                     color: Sequence[int] | None = None) -> int:
    """Count 8-connected foreground components.

    Foreground is every pixel equal to ``color`` when given, otherwise every
    pixel differing from ``background`` (default: the most frequent color).
    """
    from scipy import ndimage

    px = image.pixels
    if color is not None:
        fg = np.all(px == np.asarray(as_rgb(color), dtype=np.uint8), axis=2)
    else:
        bg = as_rgb(background) if background is not None else dominant_color(image)
        fg = np.any(px != np.asarray(bg, dtype=np.uint8), axis=2)
    _, n = ndimage.label(fg, structure=np.ones((3, 3), dtype=bool))
    return int(n)


def dominant_color(image: RasterImage) -> RGB:
    """Most frequent exact color; ties resolve to the smallest packed value."""
    packed = (image.pixels[..., 0].astype(np.uint32) << 16) | (image.pixels[..., 1].astype(np.uint32) << 8) \
        | image.pixels[..., 2].astype(np.uint32)
    values, counts = np.unique(packed.ravel(), return_counts=True)
    v = int(values[np.argmax(counts)])
    return (v >> 16) & 255, (v >> 8) & 255, v & 255


def _chunk(tag: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)


PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def encode_png(image: RasterImage) -> bytes:
    """Encode as 8-bit RGB PNG: filter type 0 on every row, zlib level 9, no ancillary chunks."""
    h, w = image.height, image.width
    raw = np.zeros((h, w * 3 + 1), dtype=np.uint8)
    raw[:, 1:] = image.pixels.reshape(h, w * 3)
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return PNG_SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", zlib.compress(raw.tobytes(), 9)) \
        + _chunk(b"IEND", b"")


def write_png(image: RasterImage, path: str | Path) -> int:
    data = encode_png(image)
    path = Path(path)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write PNG to {path}: {exc.strerror}") from exc
    return len(data)


def read_png(path: str | Path) -> RasterImage:
    """Decode any PNG Pillow understands, converted to opaque RGB8."""
    from PIL import Image

    with Image.open(path) as im:
        return RasterImage(np.asarray(im.convert("RGB"), dtype=np.uint8).copy())
