"""Judges mapping (output image, prompt) to integer Quality and Alignment scores."""
from __future__ import annotations

import base64
import math
import os
import re
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import httpx
import numpy as np

from .bench import PromptSpec, ScoreRecord, score_sample
from .errors import JudgeParseError, ScoreRangeError, TransportError, UnsupportedCategoryError
from .pages import render_page
from .raster import RasterImage, count_components, dominant_color, encode_png

RUBRIC_VERSION = "1"

# Max per-channel distance (inclusive upper bound) -> Alignment. A clear
# color mismatch (beyond 64) costs the rubric's 4 points.
COLOR_ALIGNMENT_TABLE: tuple[tuple[float, int], ...] = (
    (16, 10), (32, 9), (64, 8), (128, 6), (192, 3), (math.inf, 1))
COUNT_PENALTY = 3  # Alignment points lost per object of count error

STUB_CATEGORIES = ("inline-color", "object-counting")


def color_alignment(distance: float) -> int:
    for bound, score in COLOR_ALIGNMENT_TABLE:
        if distance <= bound:
            return score
    raise AssertionError("table ends at infinity")


def count_alignment(detected: int, expected: int) -> int:
    return max(1, 10 - COUNT_PENALTY * abs(detected - expected))


def stub_quality(img: RasterImage) -> int:
    """Artifact heuristic: constant images score 1; clipping and pixel noise cost points."""
    px = img.pixels.astype(np.int16)
    if np.all(px == px[0, 0]):
        return 1
    clipped = float(np.mean(np.any((px == 0) | (px == 255), axis=2)))
    dx = np.abs(np.diff(px, axis=1)).mean() if img.width > 1 else 0.0
    dy = np.abs(np.diff(px, axis=0)).mean() if img.height > 1 else 0.0
    noise = (dx + dy) / 2 / 255.0
    penalty = round(4 * clipped) + min(5, round(20 * noise))
    return int(max(1, 10 - penalty))


def _foreground_count(img: RasterImage, mark_rgb=None) -> int:
    if mark_rgb is not None:
        n = count_components(img, color=mark_rgb)
        if n:
            return n
    return count_components(img, background=dominant_color(img))


def judge_stub(output: RasterImage, prompt: PromptSpec) -> tuple[int, int]:
    """Deterministic offline judge for the programmatically checkable categories."""
    ann = prompt.annotations
    if prompt.category == "inline-color" and "expected_rgb" in ann:
        dom = np.asarray(dominant_color(output), dtype=int)
        dist = int(np.max(np.abs(dom - np.asarray(ann["expected_rgb"], dtype=int))))
        return stub_quality(output), color_alignment(dist)
    if prompt.category == "object-counting" and "expected_count" in ann:
        found = _foreground_count(output, ann.get("mark_rgb"))
        return stub_quality(output), count_alignment(found, int(ann["expected_count"]))
    raise UnsupportedCategoryError(
        f"stub judge cannot score category {prompt.category!r}; use the remote judge")


# -- remote judge -------------------------------------------------------------

ANCHORS = """\
Score calibration (Alignment):
  10: every element of the visual specification is reproduced exactly.
  8-9: minor imperfections only.
  5-7: the main specification is present but with clear deviations.
  3-4: major parts of the specification are wrong or missing.
  1-2: core specification missing or unusable.
Score calibration (Quality):
  10: clean, coherent image with no artifacts.
  7-9: small artifacts that do not hurt legibility.
  4-6: visible artifacts, distortions or incoherent regions.
  1-3: broken, blank or unrecognisable output."""

DEDUCTIONS = {
    "visual-text": "Misspelled or missing word = -4 alignment; illegible glyphs = -2 quality.",
    "inline-color": "Color mismatch = -4 alignment; wrong object = -3 alignment.",
    "inline-visual-reference": "Referenced object replaced by a different object = -4 alignment; "
                               "wrong color or shape detail = -2 alignment.",
    "object-counting": "Wrong object count = -3 alignment per missing or extra object.",
    "style-transfer": "Palette ignored = -3 alignment; pattern or texture ignored = -3 alignment.",
    "pose-control": "Each limb in the wrong orientation = -2 alignment; no human figure = -6 alignment.",
    "sketch-reference": "Subject differs from the sketch = -4 alignment; layout ignored = -3 alignment.",
}

RESPONSE_FORMAT = "Q:<quality> A:<alignment>"
_SCORE_LINE = re.compile(r"^Q:\s*(-?\d+)\s+A:\s*(-?\d+)$")


def rubric(category: str) -> str:
    return (
        "You are a ruthlessly strict judge of image generation. The first image is a visual "
        "specification page; the second is a generated image that should realise it. Never give the "
        "benefit of the doubt. First list every flaw you find, then score two dimensions on integer "
        "1-10 scales: Quality (image fidelity, coherence, absence of artifacts) and Alignment "
        "(faithfulness to the visual specification on the page).\n"
        f"{ANCHORS}\nCategory: {category}. Deductions: {DEDUCTIONS.get(category, 'none listed')}\n"
        f"End your answer with one line of exactly this form: {RESPONSE_FORMAT}\n"
        f"(rubric version {RUBRIC_VERSION})"
    )


def parse_judge_response(text: str) -> tuple[int, int]:
    """Read the final non-empty line as ``Q:<int> A:<int>``; out-of-range values raise, never clamp."""
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    m = _SCORE_LINE.match(lines[-1]) if lines else None
    if m is None:
        raise JudgeParseError(f"response does not end with {RESPONSE_FORMAT!r}", text)
    q, a = int(m.group(1)), int(m.group(2))
    score_sample(q, a)  # range check
    return q, a


@dataclass(frozen=True)
class JudgeEndpoint:
    url: str
    model: str
    api_key_env: str = "V2V_JUDGE_API_KEY"
    timeout: float = 60.0
    attempts: int = 3
    backoff: float = 1.0
    max_in_flight: int = 4

    @classmethod
    def from_dict(cls, d: dict) -> JudgeEndpoint:
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def _data_url(img: RasterImage) -> str:
    return "data:image/png;base64," + base64.b64encode(encode_png(img)).decode("ascii")


def build_request(output: RasterImage, page: RasterImage, prompt: PromptSpec, endpoint: JudgeEndpoint) -> dict:
    """OpenAI-compatible chat-completions body carrying both images and the rubric."""
    return {
        "model": endpoint.model,
        "temperature": 0,
        "messages": [{"role": "user", "content": [
            {"type": "text", "text": rubric(prompt.category)},
            {"type": "image_url", "image_url": {"url": _data_url(page)}},
            {"type": "image_url", "image_url": {"url": _data_url(output)}},
        ]}],
    }


def judge_remote(output: RasterImage, prompt: PromptSpec, endpoint: JudgeEndpoint, page: RasterImage | None = None,
                 client: httpx.Client | None = None, sleep: Callable[[float], None] = time.sleep) -> tuple[int, int]:
    """Score one sample with an external VLM judge.

    Malformed responses and transport failures are retried with exponential
    backoff up to ``endpoint.attempts`` times; scores outside [1, 10] raise
    immediately.
    """
    page = page if page is not None else render_page(prompt.page)
    body = build_request(output, page, prompt, endpoint)
    headers = {}
    key = os.environ.get(endpoint.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    own = client is None
    client = client or httpx.Client(timeout=endpoint.timeout)
    last: Exception | None = None
    try:
        for attempt in range(endpoint.attempts):
            if attempt:
                sleep(endpoint.backoff * 2 ** (attempt - 1))
            try:
                resp = client.post(endpoint.url, json=body, headers=headers)
            except httpx.HTTPError as exc:
                last = TransportError(f"request to {endpoint.url} failed: {exc}")
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last = TransportError(f"judge endpoint returned HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise TransportError(f"judge endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                last = JudgeParseError("response is not a chat completion", resp.text)
                continue
            try:
                return parse_judge_response(text)
            except ScoreRangeError:
                raise
            except JudgeParseError as exc:
                last = exc
        raise last
    finally:
        if own:
            client.close()


# -- batch scoring ------------------------------------------------------------

def score_samples(samples: Sequence[tuple[PromptSpec, int, RasterImage]], judge: str = "stub",
                  endpoint: JudgeEndpoint | None = None, client: httpx.Client | None = None,
                  sleep: Callable[[float], None] = time.sleep) -> list[ScoreRecord]:
    """Judge (prompt, sample_index, image) triples; remote calls run with bounded concurrency."""
    if judge == "stub":
        def one(item):
            p, k, img = item
            q, a = judge_stub(img, p)
            return ScoreRecord(p.id, p.category, k, q, a, judge="stub", rationale=f"stub v{RUBRIC_VERSION}")
        return [one(s) for s in samples]
    if judge != "remote":
        raise ValueError(f"unknown judge {judge!r}")
    if endpoint is None:
        raise ValueError("remote judging needs an endpoint configuration")
    pages: dict[str, RasterImage] = {}
    for p, _, _ in samples:
        if p.id not in pages:
            pages[p.id] = render_page(p.page)

    def remote(item):
        p, k, img = item
        q, a = judge_remote(img, p, endpoint, pages[p.id], client, sleep)
        return ScoreRecord(p.id, p.category, k, q, a, judge=f"remote:{endpoint.model}")

    with ThreadPoolExecutor(max_workers=max(1, endpoint.max_in_flight)) as pool:
        return list(pool.map(remote, samples))
