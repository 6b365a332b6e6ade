"""Byte-level ASCII tokenizer with a handful of reserved ids."""
from __future__ import annotations

from .errors import TokenizerError

PAD = 256
SYS_BEGIN = 257
GEN = 258
IMAGE = 259  # placeholder id at image positions; their embeddings come from patches
SPECIAL_NAMES = {PAD: "<pad>", SYS_BEGIN: "<sys>", GEN: "<gen>", IMAGE: "<img>"}
MIN_VOCAB = 260


def encode(text: str) -> list[int]:
    ids = []
    for i, ch in enumerate(text):
        cp = ord(ch)
        if cp > 0x7F:
            raise TokenizerError(f"character {ch!r} (U+{cp:04X}) at position {i} is outside the ASCII vocabulary")
        ids.append(cp)
    return ids


def decode(ids) -> str:
    parts = []
    for t in ids:
        t = int(t)
        if t < 0x80:
            parts.append(chr(t))
        else:
            parts.append(SPECIAL_NAMES.get(t, f"<{t}>"))
    return "".join(parts)
