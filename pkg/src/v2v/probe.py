"""Attention-routing shares, hidden-state cosines and cross-modal retrieval."""
from __future__ import annotations

import json
from collections import defaultdict
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, LabelingError, RetrievalError
from .tensorio import read_tensors, write_tensors

CONDITIONING_LABELS = ("image", "reasoning")


@dataclass
class AttentionRecord:
    step: int
    block: int
    head: int
    matrix: np.ndarray  # (latent queries, conditioning keys) softmax rows
    labels: list[str]   # one per key column: image | reasoning | pad


def dump_records(records: Sequence[AttentionRecord], path: str | Path) -> tuple[Path, Path]:
    """Tensor dump of the matrices plus a JSON list of (step, block, head, labels)."""
    path = Path(path)
    write_tensors(path, [(f"r{i}", r.matrix) for i, r in enumerate(records)], {"count": len(records)},
                  kind="attention")
    meta = [{"tensor": f"r{i}", "step": r.step, "block": r.block, "head": r.head, "labels": r.labels}
            for i, r in enumerate(records)]
    side = path.with_suffix(".meta.json")
    side.write_text(json.dumps(meta) + "\n")
    return path, side


def load_records(path: str | Path) -> list[AttentionRecord]:
    path = Path(path)
    _, tensors = read_tensors(path)
    meta = json.loads(path.with_suffix(".meta.json").read_text())
    return [AttentionRecord(m["step"], m["block"], m["head"], tensors[m["tensor"]].astype(np.float64), m["labels"])
            for m in meta]


@dataclass
class RoutingReport:
    visual_share: float
    reasoning_share: float
    n_visual: int
    n_reasoning: int
    baseline: float
    per_block_head: dict[tuple[int, int], float] = field(default_factory=dict)  # visual share
    n_matrices: int = 0

    def to_dict(self) -> dict:
        return {
            "visual_share": self.visual_share,
            "reasoning_share": self.reasoning_share,
            "n_visual": self.n_visual,
            "n_reasoning": self.n_reasoning,
            "uniform_baseline": self.baseline,
            "n_matrices": self.n_matrices,
            "per_block_head": [{"block": b, "head": h, "visual_share": v}
                               for (b, h), v in sorted(self.per_block_head.items())],
        }

    def to_table(self) -> str:
        rows = [("Visual-prefix share", f"{100 * self.visual_share:.1f}%"),
                ("Reasoning share", f"{100 * self.reasoning_share:.1f}%"),
                ("Uniform baseline (visual)", f"{100 * self.baseline:.1f}%"),
                ("Tokens (visual / reasoning)", f"{self.n_visual} / {self.n_reasoning}")]
        rows += [(f"block {b} head {h}", f"{100 * v:.1f}%") for (b, h), v in sorted(self.per_block_head.items())]
        return format_table(("Quantity", "Value"), rows)


def _matrix_visual_share(matrix: np.ndarray, labels: Sequence[str]) -> tuple[float, int, int]:
    lab = np.asarray(labels)
    vis = lab == "image"
    rea = lab == "reasoning"
    if not (vis.any() or rea.any()):
        raise LabelingError("no key column is labelled image or reasoning")
    if matrix.shape[1] != lab.size:
        raise LabelingError(f"matrix has {matrix.shape[1]} key columns but {lab.size} labels")
    mass = matrix.sum(axis=0)
    m_vis, m_rea = mass[vis].sum(), mass[rea].sum()
    total = m_vis + m_rea
    share = float(m_vis / total) if total > 0 else float(vis.sum() / (vis.sum() + rea.sum()))
    return share, int(vis.sum()), int(rea.sum())


def routing_shares(records: Sequence[AttentionRecord]) -> RoutingReport:
    """Split latent-query attention mass between image and reasoning key columns.

    Each matrix contributes its visual share (mass on image columns over mass
    on all conditioning columns); the report averages those shares over
    matrices, reduced in (block, head, step) order.
    """
    if not records:
        raise LabelingError("no attention records")
    ordered = sorted(records, key=lambda r: (r.block, r.head, r.step if r.step is not None else -1))
    shares = []
    by_bh: dict[tuple[int, int], list[float]] = defaultdict(list)
    n_vis = n_rea = None
    for r in ordered:
        s, nv, nr = _matrix_visual_share(np.asarray(r.matrix, dtype=np.float64), r.labels)
        shares.append(s)
        by_bh[(r.block, r.head)].append(s)
        n_vis, n_rea = nv, nr
    vis = float(np.mean(shares))
    return RoutingReport(
        visual_share=vis,
        reasoning_share=1.0 - vis,
        n_visual=n_vis,
        n_reasoning=n_rea,
        baseline=n_vis / (n_vis + n_rea),
        per_block_head={k: float(np.mean(v)) for k, v in by_bh.items()},
        n_matrices=len(shares),
    )


def _unit_rows(x: np.ndarray, what: str) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(n == 0):
        raise DegenerateInputError(f"{what} contains a zero-norm vector")
    return x / n


def cosine_diag(states_a, states_b, pooling: str = "mean") -> float:
    """Cosine of mean-pooled rows, or the mean pairwise row cosine."""
    a = np.atleast_2d(getattr(states_a, "values", states_a))
    b = np.atleast_2d(getattr(states_b, "values", states_b))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"state dims differ: {a.shape[1]} vs {b.shape[1]}")
    if pooling == "mean":
        pa, pb = _unit_rows(a.mean(axis=0), "pooled A"), _unit_rows(b.mean(axis=0), "pooled B")
        return float((pa @ pb.T)[0, 0])
    if pooling == "pairwise":
        return float((_unit_rows(a, "A") @ _unit_rows(b, "B").T).mean())
    raise ValueError(f"unknown pooling {pooling!r}")


VARIANTS = ("token-max", "mean-pool", "full-token")


def similarity_matrix(items: Sequence[tuple[np.ndarray, np.ndarray]], variant: str = "token-max") -> np.ndarray:
    """S[i, j] = score between item i's image states and item j's phrase states."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    n = len(items)
    S = np.empty((n, n))
    if variant == "mean-pool":
        img = np.vstack([_unit_rows(np.atleast_2d(a).mean(axis=0), f"item {i} image pool") for i, (a, _) in enumerate(items)])
        phr = np.vstack([_unit_rows(np.atleast_2d(b).mean(axis=0), f"item {i} phrase pool") for i, (_, b) in enumerate(items)])
        return img @ phr.T
    img = [_unit_rows(a, f"item {i} image states") for i, (a, _) in enumerate(items)]
    phr = [_unit_rows(b, f"item {i} phrase states") for i, (_, b) in enumerate(items)]
    for i in range(n):
        for j in range(n):
            c = img[i] @ phr[j].T
            S[i, j] = c.max() if variant == "token-max" else c.mean()
    return S


@dataclass
class RetrievalReport:
    variant: str
    recall: dict[int, float]
    mrr: float
    margin: float
    ranks: list[int]

    def to_dict(self) -> dict:
        return {"variant": self.variant, "recall": {f"R@{k}": v for k, v in sorted(self.recall.items())},
                "mrr": self.mrr, "margin": self.margin, "ranks": self.ranks}


def tokenmax_retrieval(items: Sequence[tuple[np.ndarray, np.ndarray]], k_values: Sequence[int] = (1, 3),
                       variant: str = "token-max") -> RetrievalReport:
    """Rank each item's true phrase among all phrases.

    Rank counts non-matching candidates scoring at least as high as the true
    match, so ties never flatter the result.
    """
    if len(items) < 2:
        raise RetrievalError(f"retrieval needs at least 2 items, got {len(items)}")
    dims = {np.atleast_2d(a).shape[1] for a, b in items} | {np.atleast_2d(b).shape[1] for a, b in items}
    if len(dims) != 1:
        raise RetrievalError(f"state dimensions differ across items: {sorted(dims)}")
    S = similarity_matrix(items, variant)
    n = S.shape[0]
    diag = np.diag(S)
    off = S.copy()
    np.fill_diagonal(off, -np.inf)
    ranks = (1 + (off >= diag[:, None]).sum(axis=1)).astype(int)
    margin = float(np.mean(diag - off.max(axis=1)))
    recall = {int(k): float(np.mean(ranks <= k)) for k in k_values}
    return RetrievalReport(variant, recall, float(np.mean(1.0 / ranks)), margin, ranks.tolist())


def layer_alignment(visual: Mapping[int, Sequence[np.ndarray]], text: Mapping[int, Sequence[np.ndarray]],
                    pairs: Sequence[tuple[int, int]] | None = None) -> dict[int, float]:
    """Per-layer mean cosine between pooled visual and pooled text states of paired items."""
    out = {}
    for layer in sorted(visual):
        vs, ts = visual[layer], text[layer]
        pr = list(pairs) if pairs is not None else [(i, i) for i in range(min(len(vs), len(ts)))]
        if not pr:
            raise ValueError("layer alignment needs at least one pair")
        out[layer] = float(np.mean([cosine_diag(vs[i], ts[j]) for i, j in pr]))
    return out


def format_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [list(map(str, headers))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    fmt = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths))  # noqa: E731
    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(cells[0]), rule] + [fmt(r) for r in cells[1:]])


def retrieval_table(reports: Sequence[RetrievalReport], labels: Sequence[str] | None = None) -> str:
    labels = labels or [r.variant for r in reports]
    ks = sorted({k for r in reports for k in r.recall})
    rows = [[lab] + [f"{r.recall[k]:.4g}" for k in ks] + [f"{r.mrr:.3f}", f"{r.margin:.4f}"]
            for lab, r in zip(labels, reports)]
    return format_table(["Diagnostic"] + [f"R@{k}" for k in ks] + ["MRR", "Margin"], rows)
