"""Independent reference implementations used as test oracles.

Deliberately naive: plain Python loops, no shared code with the package.
"""
from __future__ import annotations

import math
from collections import deque


def bfs_components(mask) -> int:
    """8-connected components of a boolean 2-D array via breadth-first flood fill."""
    h, w = len(mask), len(mask[0])
    seen = [[False] * w for _ in range(h)]
    n = 0
    for y in range(h):
        for x in range(w):
            if not mask[y][x] or seen[y][x]:
                continue
            n += 1
            seen[y][x] = True
            q = deque([(y, x)])
            while q:
                cy, cx = q.popleft()
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny][nx] and not seen[ny][nx]:
                            seen[ny][nx] = True
                            q.append((ny, nx))
    return n


def table_advance(table_text: str, text: str, font_size: int) -> int:
    """Sum advances straight from the shipped glyph table."""
    adv = {}
    for line in table_text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            parts = line.split()
            adv[int(parts[0], 16)] = int(parts[1])
    return sum(adv[ord(c)] for c in text) * (font_size // 8)


def routing_visual_share(matrices, labels_per_matrix) -> float:
    """Double-loop mass accumulation, renormalised over image+reasoning columns, averaged over matrices."""
    shares = []
    for m, labels in zip(matrices, labels_per_matrix):
        vis = rea = 0.0
        for row in m:
            for j, v in enumerate(row):
                if labels[j] == "image":
                    vis += v
                elif labels[j] == "reasoning":
                    rea += v
        shares.append(vis / (vis + rea))
    return sum(shares) / len(shares)


def cosine(u, v) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    return dot / (math.sqrt(sum(a * a for a in u)) * math.sqrt(sum(b * b for b in v)))


def mean_rows(m):
    n = len(m)
    return [sum(r[k] for r in m) / n for k in range(len(m[0]))]


def similarity(a, b, variant: str) -> float:
    if variant == "mean-pool":
        return cosine(mean_rows(a), mean_rows(b))
    pair = [cosine(x, y) for x in a for y in b]
    return max(pair) if variant == "token-max" else sum(pair) / len(pair)


def retrieval(items, variant: str, ks=(1, 3)):
    """Exhaustive pairwise scoring and pessimistic ranking (ties count against the true match)."""
    n = len(items)
    S = [[similarity(items[i][0], items[j][1], variant) for j in range(n)] for i in range(n)]
    ranks, margins = [], []
    for i in range(n):
        others = [S[i][j] for j in range(n) if j != i]
        ranks.append(1 + sum(1 for s in others if s >= S[i][i]))
        margins.append(S[i][i] - max(others))
    return {
        "ranks": ranks,
        "recall": {k: sum(r <= k for r in ranks) / n for k in ks},
        "mrr": sum(1 / r for r in ranks) / n,
        "margin": sum(margins) / n,
    }


def nested_mean(records):
    """records: (category, prompt, final). Sample -> prompt -> category -> unweighted overall."""
    by_prompt = {}
    for cat, prompt, final in records:
        by_prompt.setdefault((cat, prompt), []).append(final)
    by_cat = {}
    for (cat, _), vals in by_prompt.items():
        by_cat.setdefault(cat, []).append(sum(vals) / len(vals))
    cat_means = {c: sum(v) / len(v) for c, v in by_cat.items()}
    return cat_means, sum(cat_means.values()) / len(cat_means)
