"""Procedural stand-ins for the imagery a page can embed: object icons, pose
skeletons, line sketches and style swatches. All drawings are deterministic."""
from __future__ import annotations

import math

import numpy as np

from .raster import RasterImage, as_rgb, draw_line, fill_disc, fill_rect, new_canvas

WHITE = (255, 255, 255)
BLACK = (0, 0, 0)

ICON_SHAPES = ("disc", "square", "triangle", "ring", "cross", "diamond")
SKETCH_SUBJECTS = ("house", "tree", "car", "cup", "boat", "sun")
STYLE_PATTERNS = ("stripes", "checker", "dots", "waves", "grid", "gradient")


def icon(shape: str, color=(255, 0, 0), size: int = 72) -> RasterImage:
    img = new_canvas(size, size, WHITE)
    c = size / 2
    r = size * 0.38
    color = as_rgb(color)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    if shape == "disc":
        fill_disc(img, c - 0.5, c - 0.5, r, color)
    elif shape == "square":
        m = int(round(size * 0.15))
        fill_rect(img, m, m, size - 2 * m, size - 2 * m, color)
    elif shape == "triangle":
        top, base = size * 0.12, size * 0.88
        half = (yy - top) / (base - top) * r * 1.1
        img.pixels[(yy >= top) & (yy <= base) & (np.abs(xx - c) <= half)] = color
    elif shape == "ring":
        d2 = (xx - c) ** 2 + (yy - c) ** 2
        img.pixels[(d2 <= r * r) & (d2 >= (r * 0.55) ** 2)] = color
    elif shape == "cross":
        w = int(round(size * 0.24))
        m = int(round(size * 0.12))
        fill_rect(img, (size - w) // 2, m, w, size - 2 * m, color)
        fill_rect(img, m, (size - w) // 2, size - 2 * m, w, color)
    elif shape == "diamond":
        img.pixels[np.abs(xx - c) + np.abs(yy - c) <= r * 1.2] = color
    else:
        raise ValueError(f"unknown icon shape {shape!r}; choose from {ICON_SHAPES}")
    return img


def pose(arm_left: float = -30.0, arm_right: float = 30.0, leg_spread: float = 20.0,
         size: int = 256, thickness: int = 4) -> RasterImage:
    """Stick-figure skeleton in the usual keypoint colours; angles in degrees
    measured downward from horizontal."""
    img = new_canvas(size, size, BLACK)
    s = size / 256
    neck, hip = (128 * s, 70 * s), (128 * s, 150 * s)
    head = (128 * s, 42 * s)

    def limb(origin, angle, length):
        a = math.radians(angle)
        return origin[0] + length * math.cos(a), origin[1] + length * math.sin(a)

    l_hand = limb(neck, 180 - arm_left, 70 * s)
    r_hand = limb(neck, arm_right, 70 * s)
    l_foot = limb(hip, 90 + leg_spread, 90 * s)
    r_foot = limb(hip, 90 - leg_spread, 90 * s)
    bones = [(head, neck, (255, 0, 85)), (neck, hip, (255, 170, 0)), (neck, l_hand, (0, 255, 0)),
             (neck, r_hand, (0, 170, 255)), (hip, l_foot, (170, 0, 255)), (hip, r_foot, (255, 255, 0))]
    for p0, p1, col in bones:
        draw_line(img, p0, p1, col, thickness)
    for p in (head, neck, hip, l_hand, r_hand, l_foot, r_foot):
        fill_disc(img, p[0], p[1], 3 * thickness / 2, (255, 255, 255))
    return img


def sketch(subject: str, size: int = 256, thickness: int = 3) -> RasterImage:
    img = new_canvas(size, size, WHITE)
    s = size / 256

    def poly(points, closed=True):
        pts = [(x * s, y * s) for x, y in points]
        pairs = zip(pts, pts[1:] + pts[:1]) if closed else zip(pts, pts[1:])
        for a, b in pairs:
            draw_line(img, a, b, BLACK, thickness)

    def circle(cx, cy, r, n=32):
        poly([(cx + r * math.cos(2 * math.pi * k / n), cy + r * math.sin(2 * math.pi * k / n)) for k in range(n)])

    if subject == "house":
        poly([(60, 130), (196, 130), (196, 220), (60, 220)])
        poly([(50, 130), (128, 60), (206, 130)], closed=False)
        poly([(110, 220), (110, 170), (146, 170), (146, 220)], closed=False)
    elif subject == "tree":
        poly([(118, 220), (118, 150), (138, 150), (138, 220)])
        circle(128, 110, 50)
    elif subject == "car":
        poly([(40, 170), (216, 170), (216, 140), (170, 140), (150, 105), (90, 105), (70, 140), (40, 140)])
        circle(85, 180, 18)
        circle(175, 180, 18)
    elif subject == "cup":
        poly([(80, 90), (170, 90), (160, 210), (90, 210)])
        circle(185, 140, 22)
    elif subject == "boat":
        poly([(40, 160), (216, 160), (186, 200), (70, 200)])
        poly([(128, 160), (128, 50), (190, 150)], closed=False)
    elif subject == "sun":
        circle(128, 128, 40)
        for k in range(8):
            a = 2 * math.pi * k / 8
            poly([(128 + 55 * math.cos(a), 128 + 55 * math.sin(a)),
                  (128 + 85 * math.cos(a), 128 + 85 * math.sin(a))], closed=False)
    else:
        raise ValueError(f"unknown sketch subject {subject!r}; choose from {SKETCH_SUBJECTS}")
    return img


def style_swatch(pattern: str, colors=((200, 60, 40), (240, 220, 160)), size: int = 256) -> RasterImage:
    a, b = (np.array(as_rgb(c), dtype=np.float64) for c in colors)
    yy, xx = np.mgrid[0:size, 0:size]
    if pattern == "stripes":
        t = ((xx + yy) // 24) % 2
    elif pattern == "checker":
        t = ((xx // 32) + (yy // 32)) % 2
    elif pattern == "dots":
        t = (((xx % 32) - 16) ** 2 + ((yy % 32) - 16) ** 2 < 81).astype(int)
    elif pattern == "waves":
        t = (np.sin(xx / 12.0 + 3 * np.sin(yy / 20.0)) > 0).astype(int)
    elif pattern == "grid":
        t = ((xx % 32 < 4) | (yy % 32 < 4)).astype(int)
    elif pattern == "gradient":
        t = xx / max(size - 1, 1)
    else:
        raise ValueError(f"unknown style pattern {pattern!r}; choose from {STYLE_PATTERNS}")
    t = np.asarray(t, dtype=np.float64)[..., None]
    px = np.rint(a * (1 - t) + b * t).astype(np.uint8)
    return RasterImage(px)


def from_descriptor(desc: dict) -> RasterImage:
    """Build an asset from its JSON descriptor, e.g. ``{"type": "icon", "shape": "disc", "color": [255, 0, 0]}``."""
    d = dict(desc)
    kind = d.pop("type")
    if "color" in d and isinstance(d["color"], str):
        from .pages import named_color
        d["color"] = named_color(d["color"])
    if "colors" in d:
        from .pages import named_color
        d["colors"] = tuple(named_color(c) if isinstance(c, str) else tuple(c) for c in d["colors"])
    builders = {"icon": icon, "pose": pose, "sketch": sketch, "style": style_swatch}
    if kind not in builders:
        raise ValueError(f"unknown asset type {kind!r}; choose from {sorted(builders)}")
    return builders[kind](**d)
