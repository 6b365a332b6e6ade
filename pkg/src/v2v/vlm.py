"""Miniature causal multimodal encoder.

The sequence layout is ``[system, image patches, user template, <gen>]``
followed by greedily generated reasoning tokens. Hidden states are read at
any layer, either from an incremental (KV-cached) decode or from one
cache-free forward pass over the whole sequence.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import tokenizer as tok
from .bundle import IMAGE, REASONING, ConditioningBundle
from .errors import CapacityError, LayerError, ModeError, PatchSizeError
from .raster import RasterImage
from .tensorio import read_tensors, write_tensors

SEGMENT_ORDER = ("system", "image", "user", "gen-marker", "reasoning")
MODES = ("image-hs-only", "full-final")


@dataclass(frozen=True)
class VlmConfig:
    model_dim: int = 64
    layers: int = 4
    heads: int = 4
    vocab_size: int = 512
    patch_size: int = 16
    max_sequence: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} is not divisible by heads {self.heads}")
        if self.vocab_size < tok.MIN_VOCAB:
            raise ValueError(f"vocab_size must be at least {tok.MIN_VOCAB}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")


class SegmentMap:
    """Per-position segment labels, stored as (label, length) runs."""

    def __init__(self, labels):
        self.labels = list(labels)
        bad = set(self.labels) - set(SEGMENT_ORDER)
        if bad:
            raise ValueError(f"unknown segment labels {sorted(bad)}")
        order = [SEGMENT_ORDER.index(lab) for lab in self.labels]
        if order != sorted(order):
            raise ValueError("segments must appear in order system, image, user, gen-marker, reasoning")

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, SegmentMap) and self.labels == other.labels

    def positions(self, label: str) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab == label]

    def length(self, label: str) -> int:
        return sum(1 for lab in self.labels if lab == label)

    def runs(self) -> list[dict]:
        out: list[dict] = []
        for i, lab in enumerate(self.labels):
            if out and out[-1]["label"] == lab:
                out[-1]["length"] += 1
            else:
                out.append({"label": lab, "start": i, "length": 1})
        return out

    def to_json(self) -> str:
        return json.dumps({"segments": self.runs()}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> SegmentMap:
        labels: list[str] = []
        for run in json.loads(text)["segments"]:
            if run["start"] != len(labels):
                raise ValueError("segment runs are not contiguous")
            labels += [run["label"]] * run["length"]
        return cls(labels)

    def extended(self, label: str, n: int) -> SegmentMap:
        return SegmentMap(self.labels + [label] * n)


@dataclass
class TokenSequence:
    """Token ids with segment labels. ``patches`` holds the flattened page
    patches (rows, P*P*3, scaled to [-1, 1]) that stand in for image ids."""

    ids: list[int]
    segments: SegmentMap
    patches: np.ndarray
    page_size: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if len(self.ids) != len(self.segments):
            raise ValueError("ids and segment map differ in length")
        if self.patches.shape[0] != self.segments.length("image"):
            raise ValueError("patch count does not match the image segment")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def reasoning_ids(self) -> list[int]:
        return [self.ids[i] for i in self.segments.positions("reasoning")]


@dataclass
class HiddenStateMatrix:
    values: np.ndarray  # (T, D) float64
    layer: int
    segments: SegmentMap

    def __post_init__(self):
        if self.values.shape[0] != len(self.segments):
            raise ValueError("row count does not match the segment map")

    def rows(self, label: str) -> np.ndarray:
        return self.values[self.segments.positions(label)]

    def dump(self, path: str | Path) -> tuple[Path, Path]:
        """Write the tensor file plus a JSON sidecar holding the segment map."""
        path = Path(path)
        write_tensors(path, [("states", self.values)], {"layer": self.layer}, kind="hidden-states")
        side = path.with_suffix(".segments.json")
        side.write_text(self.segments.to_json() + "\n")
        return path, side

    @classmethod
    def load(cls, path: str | Path) -> HiddenStateMatrix:
        path = Path(path)
        header, tensors = read_tensors(path)
        segs = SegmentMap.from_json(path.with_suffix(".segments.json").read_text())
        return cls(tensors["states"].astype(np.float64), header["meta"]["layer"], segs)


@dataclass
class DecodeResult:
    sequence: TokenSequence
    states: dict[int, np.ndarray] = field(default_factory=dict)  # layer -> (T, D), from the cached decode


def extract_patches(page: RasterImage, patch_size: int) -> np.ndarray:
    """Row-major patches, each flattened (P, P, 3) and scaled to [-1, 1]."""
    P = patch_size
    w, h = page.width, page.height
    if w % P or h % P:
        need_w, need_h = (-w) % P, (-h) % P
        raise PatchSizeError(
            f"page {w}x{h} is not divisible by patch size {P}; pad by {need_w}px width and {need_h}px height")
    px = page.pixels.astype(np.float64) / 127.5 - 1.0
    gh, gw = h // P, w // P
    return px.reshape(gh, P, gw, P, 3).transpose(0, 2, 1, 3, 4).reshape(gh * gw, P * P * 3)


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim, bias=False)
        self.out = nn.Linear(dim, dim, bias=False)

    def forward(self, x, cache=None):
        # x: (T, D); cache: dict with "k", "v" of shape (H, T_past, hd) or None
        T, D = x.shape
        hd = D // self.heads
        q, k, v = self.qkv(x).split(D, dim=-1)
        q, k, v = (t.view(T, self.heads, hd).transpose(0, 1) for t in (q, k, v))
        past = 0
        if cache is not None and "k" in cache:
            past = cache["k"].shape[1]
            k = torch.cat([cache["k"], k], dim=1)
            v = torch.cat([cache["v"], v], dim=1)
        if cache is not None:
            cache["k"], cache["v"] = k, v
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        qpos = torch.arange(past, past + T).unsqueeze(1)
        kpos = torch.arange(k.shape[1]).unsqueeze(0)
        scores = scores.masked_fill(kpos > qpos, float("-inf"))
        att = torch.softmax(scores, dim=-1)
        y = (att @ v).transpose(0, 1).reshape(T, D)
        return self.out(y)


class Block(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = RMSNorm(dim)
        self.attn = CausalSelfAttention(dim, heads)
        self.norm2 = RMSNorm(dim)
        self.fc = nn.Linear(dim, 4 * dim, bias=False)
        self.proj = nn.Linear(4 * dim, dim, bias=False)

    def forward(self, x, cache=None):
        x = x + self.attn(self.norm1(x), cache)
        return x + self.proj(F.gelu(self.fc(self.norm2(x))))


class MicroVLM(nn.Module):
    """Pre-norm causal transformer over mixed token/patch sequences.

    ``layer l`` states are the residual stream after block l (1-based); the
    final norm is applied only in front of the LM head.
    """

    def __init__(self, config: VlmConfig = VlmConfig()):
        super().__init__()
        c = config
        self.config = c
        D = c.model_dim
        P = c.patch_size
        self.tok_emb = nn.Parameter(torch.empty(c.vocab_size, D))
        self.pos_emb = nn.Parameter(torch.empty(c.max_sequence, D))
        self.patch_proj = nn.Linear(P * P * 3, D, bias=False)
        self.patch_pos = nn.Parameter(torch.empty(c.max_sequence, D))
        self.blocks = nn.ModuleList(Block(D, c.heads) for _ in range(c.layers))
        self.norm_f = RMSNorm(D)
        self.lm_head = nn.Linear(D, c.vocab_size, bias=False)
        self._init_weights()
        self.double()
        self.requires_grad_(False)
        self.eval()

    def _init_weights(self):
        g = torch.Generator().manual_seed(self.config.seed)
        std = 1.0 / math.sqrt(self.config.model_dim)
        for name, p in self.named_parameters():
            if name.endswith("norm1.weight") or name.endswith("norm2.weight") or name == "norm_f.weight":
                continue
            with torch.no_grad():
                # draw in float32 so checkpoints round-trip exactly
                p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float32) * std)

    # -- weights -------------------------------------------------------------
    def save(self, path: str | Path) -> int:
        tensors = [(n, p.detach().numpy()) for n, p in self.named_parameters()]
        return write_tensors(path, tensors, {"config": asdict(self.config)}, kind="micro-vlm")

    @classmethod
    def load(cls, path: str | Path) -> MicroVLM:
        header, tensors = read_tensors(path)
        model = cls(VlmConfig(**header["meta"]["config"]))
        with torch.no_grad():
            for n, p in model.named_parameters():
                p.copy_(torch.from_numpy(tensors[n].astype(np.float64)))
        return model

    # -- embedding -----------------------------------------------------------
    def patchify(self, page: RasterImage) -> torch.Tensor:
        """Image token embeddings: projected patches plus patch position embeddings."""
        return self.embed_patches(extract_patches(page, self.config.patch_size))

    def embed_patches(self, patches: np.ndarray) -> torch.Tensor:
        n = patches.shape[0]
        if n > self.config.max_sequence:
            raise CapacityError(n, self.config.max_sequence, "image patch grid")
        return self.patch_proj(torch.from_numpy(patches)) + self.patch_pos[:n]

    def _embed(self, seq: TokenSequence, start: int, end: int) -> torch.Tensor:
        ids = torch.tensor(seq.ids[start:end], dtype=torch.long)
        x = self.tok_emb[ids].clone()
        img_pos = seq.segments.positions("image")
        if img_pos:
            first = img_pos[0]
            sel = [i for i in range(start, end) if seq.segments.labels[i] == "image"]
            if sel:
                pidx = [i - first for i in sel]
                emb = self.patch_proj(torch.from_numpy(seq.patches[pidx])) + self.patch_pos[pidx]
                x[[i - start for i in sel]] = emb
        return x + self.pos_emb[start:end]

    def _run(self, seq: TokenSequence, start: int, end: int, caches=None):
        x = self._embed(seq, start, end)
        states = []
        for i, block in enumerate(self.blocks):
            x = block(x, None if caches is None else caches[i])
            states.append(x)
        return states, self.lm_head(self.norm_f(x))

    # -- public operations ---------------------------------------------------
    def build_prefix(self, page: RasterImage, template: str = "", system_text: str = "") -> TokenSequence:
        patches = extract_patches(page, self.config.patch_size)
        sys_ids = [tok.SYS_BEGIN] + tok.encode(system_text)
        user_ids = tok.encode(template)
        n_img = patches.shape[0]
        ids = sys_ids + [tok.IMAGE] * n_img + user_ids + [tok.GEN]
        labels = (["system"] * len(sys_ids) + ["image"] * n_img + ["user"] * len(user_ids) + ["gen-marker"])
        if len(ids) > self.config.max_sequence:
            raise CapacityError(len(ids), self.config.max_sequence, "prefix")
        return TokenSequence(ids, SegmentMap(labels), patches, (page.width, page.height))

    @torch.no_grad()
    def generate_reasoning(self, prefix: TokenSequence, n: int, return_states: bool = False):
        """Greedy-decode ``n`` tokens after ``prefix`` using a KV cache.

        Argmax ties resolve to the lowest token id (torch.argmax returns the
        first maximal index). With ``return_states`` the last generated token
        is also fed through the cache so every position has cached states;
        the result is then a ``DecodeResult``.
        """
        if n < 0:
            raise ValueError("n must be >= 0")
        if len(prefix) + n > self.config.max_sequence:
            raise CapacityError(len(prefix) + n, self.config.max_sequence)
        seq = prefix
        per_layer: list[list[torch.Tensor]] = [[] for _ in self.blocks]
        if n == 0 and not return_states:
            return prefix
        caches = [{} for _ in self.blocks]
        states, logits = self._run(seq, 0, len(seq), caches)
        for li, s in enumerate(states):
            per_layer[li].append(s)
        ids = list(seq.ids)
        for step in range(n):
            nxt = int(torch.argmax(logits[-1]))
            ids.append(nxt)
            seq = TokenSequence(ids[:], prefix.segments.extended("reasoning", step + 1), prefix.patches,
                                prefix.page_size)
            if step < n - 1 or return_states:
                states, logits = self._run(seq, len(ids) - 1, len(ids), caches)
                for li, s in enumerate(states):
                    per_layer[li].append(s)
        if not return_states:
            return seq
        return DecodeResult(seq, {li + 1: torch.cat(chunks).numpy() for li, chunks in enumerate(per_layer)})

    def _check_layer(self, layer: int) -> int:
        L = self.config.layers
        if not 1 <= layer <= L:
            raise LayerError(f"layer {layer} outside [1, {L}]")
        return layer

    @torch.no_grad()
    def recompute_states(self, seq: TokenSequence, layer: int | None = None) -> HiddenStateMatrix:
        """One cache-free forward pass over the whole sequence (teacher forcing)."""
        layer = self._check_layer(self.config.layers if layer is None else layer)
        states, _ = self._run(seq, 0, len(seq))
        return HiddenStateMatrix(states[layer - 1].numpy().copy(), layer, seq.segments)

    @torch.no_grad()
    def recompute_all_layers(self, seq: TokenSequence) -> dict[int, HiddenStateMatrix]:
        states, _ = self._run(seq, 0, len(seq))
        return {i + 1: HiddenStateMatrix(s.numpy().copy(), i + 1, seq.segments) for i, s in enumerate(states)}


def extract(states: HiddenStateMatrix, mode: str) -> ConditioningBundle:
    """Select the conditioning rows: image positions, then (full-final) reasoning positions."""
    if mode not in MODES:
        raise ModeError(f"unknown mode {mode!r}; choose from {MODES}")
    img = states.segments.positions("image")
    reason = states.segments.positions("reasoning") if mode == "full-final" else []
    if mode == "full-final" and not reason:
        raise ModeError("full-final needs at least one generated reasoning token")
    pos = img + reason
    return ConditioningBundle(
        rows=states.values[pos].copy(),
        mode=mode,
        layer=states.layer,
        sources=[IMAGE] * len(img) + [REASONING] * len(reason),
        positions=pos,
        n_image_original=len(img),
        n_reasoning_original=len(reason),
        history=[f"extract:{mode}@L{states.layer}"],
    )
