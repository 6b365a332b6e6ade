"""End-to-end conditioning route: page -> prefix -> reasoning -> recompute -> extract -> fit -> sample."""
from __future__ import annotations

import hashlib
import json
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .bundle import IMAGE, PAD, REASONING, ConditioningBundle
from .dit import DitConfig, MicroDiT, SampleResult, sample
from .errors import LengthError, ModeError, StageError, V2VError
from .raster import RasterImage
from .vlm import MODES, MicroVLM, VlmConfig, extract

DEFAULT_TEMPLATE = "Describe the image this page specifies, then draw it."
DEFAULT_SYSTEM = "You are a visual assistant."
FIT_POLICIES = ("tail",)

_MASK64 = (1 << 64) - 1


def content_hash(obj) -> str:
    """64-bit blake2b over canonical little-endian bytes (hex)."""
    h = hashlib.blake2b(digest_size=8)
    if isinstance(obj, RasterImage):
        h.update(np.asarray(obj.pixels.shape, dtype="<i8").tobytes())
        h.update(obj.tobytes())
    elif isinstance(obj, (bytes, bytearray)):
        h.update(bytes(obj))
    else:
        arr = np.asarray(obj)
        canon = "<f8" if arr.dtype.kind == "f" else "<i8"
        h.update(np.asarray(arr.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(arr, dtype=canon).tobytes())
    return h.hexdigest()


def derive_seed(base: int, *parts) -> int:
    """base XOR a 64-bit hash of the named parts."""
    h = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8)
    return (int(base) ^ int.from_bytes(h.digest(), "little")) & _MASK64


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "full-final"
    tokens: int = 200
    layer: int | None = None  # None = last encoder layer
    fit_policy: str = "tail"
    cond_length: int | None = None  # None = no fitting
    template: str = DEFAULT_TEMPLATE
    system_text: str = DEFAULT_SYSTEM
    dit: DitConfig = field(default_factory=DitConfig)
    vlm: VlmConfig = field(default_factory=VlmConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ModeError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.mode == "full-final" and self.tokens < 1:
            raise ModeError("full-final needs a reasoning budget of at least 1 token")
        if self.fit_policy not in FIT_POLICIES:
            raise ValueError(f"unknown fit policy {self.fit_policy!r}")
        if self.cond_length is not None and self.cond_length < 1:
            raise LengthError(f"conditioning length must be >= 1, got {self.cond_length}")

    @property
    def effective_tokens(self) -> int:
        return self.tokens if self.mode == "full-final" else 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        d = dict(d)
        dit = DitConfig(**d.pop("dit", {}))
        vlm = VlmConfig(**d.pop("vlm", {}))
        return cls(dit=dit, vlm=vlm, **d)


@dataclass
class RunTrace:
    config: dict
    page_size: tuple[int, int]
    page_hash: str
    prefix_length: int
    segment_lengths: dict[str, int]
    reasoning_tokens: int
    reasoning_hash: str
    layer: int
    bundle_length_extracted: int
    bundle_length: int
    bundle: dict
    bundle_hash: str
    seed: int
    steps: int
    guidance: float
    latent_hash: str
    output_hash: str
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def fit_length(bundle: ConditioningBundle, target: int, policy: str = "tail") -> ConditioningBundle:
    """Truncate (reasoning tail first, then image tail) or zero-pad to ``target`` rows."""
    if target < 1:
        raise LengthError(f"target length must be >= 1, got {target}")
    if policy not in FIT_POLICIES:
        raise ValueError(f"unknown fit policy {policy!r}")
    k = len(bundle)
    if k == target:
        return bundle
    sources, positions = list(bundle.sources), list(bundle.positions)
    if k > target:
        excess = k - target
        keep = np.ones(k, dtype=bool)
        for label in (PAD, REASONING, IMAGE):
            for i in range(k - 1, -1, -1):
                if excess == 0:
                    break
                if keep[i] and sources[i] == label:
                    keep[i] = False
                    excess -= 1
        rows = bundle.rows[keep]
        sources = [s for s, kp in zip(sources, keep) if kp]
        positions = [p for p, kp in zip(positions, keep) if kp]
        note = f"fit:truncate {k}->{target}"
    else:
        rows = np.vstack([bundle.rows, np.zeros((target - k, bundle.dim))])
        sources += [PAD] * (target - k)
        positions += [-1] * (target - k)
        note = f"fit:pad {k}->{target}"
    return replace(bundle, rows=rows, sources=sources, positions=positions, history=bundle.history + [note])


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (V2VError, ValueError) as exc:
        raise StageError(name, exc) from exc


def build_bundle(page: RasterImage, config: PipelineConfig, vlm: MicroVLM, layer: int | None = None):
    """Run the encoder half of the route; returns (bundle, prefix, sequence)."""
    layer = config.layer if layer is None else layer
    prefix = _stage("build_prefix", vlm.build_prefix, page, config.template, config.system_text)
    seq = prefix
    if config.mode == "full-final":
        seq = _stage("generate_reasoning", vlm.generate_reasoning, prefix, config.tokens)
    states = _stage("recompute_states", vlm.recompute_states, seq, layer)
    bundle = _stage("extract", extract, states, config.mode)
    return bundle, prefix, seq


def run_pipeline(page: RasterImage, config: PipelineConfig = PipelineConfig(), vlm: MicroVLM | None = None,
                 dit: MicroDiT | None = None, layer: int | None = None) -> tuple[RasterImage, RunTrace]:
    vlm = vlm if vlm is not None else MicroVLM(config.vlm)
    dit = dit if dit is not None else MicroDiT(config.dit)
    warnings = []
    if config.mode == "image-hs-only" and config.tokens:
        warnings.append(f"reasoning budget {config.tokens} ignored in image-hs-only mode")
    bundle, prefix, seq = build_bundle(page, config, vlm, layer)
    extracted = len(bundle)
    if config.cond_length is not None:
        bundle = _stage("fit_length", fit_length, bundle, config.cond_length, config.fit_policy)
    d = config.dit
    result: SampleResult = _stage("sample", sample, dit, bundle, d.steps, d.guidance, d.seed)
    trace = RunTrace(
        config=config.to_dict(),
        page_size=(page.width, page.height),
        page_hash=content_hash(page),
        prefix_length=len(prefix),
        segment_lengths={lab: seq.segments.length(lab) for lab in ("system", "image", "user", "gen-marker", "reasoning")},
        reasoning_tokens=len(seq) - len(prefix),
        reasoning_hash=content_hash(np.asarray(seq.reasoning_ids, dtype=np.int64)),
        layer=bundle.layer,
        bundle_length_extracted=extracted,
        bundle_length=len(bundle),
        bundle=bundle.metadata(),
        bundle_hash=content_hash(bundle.rows),
        seed=d.seed,
        steps=d.steps,
        guidance=d.guidance,
        latent_hash=content_hash(result.latent),
        output_hash=content_hash(result.image),
        warnings=warnings,
    )
    return result.image, trace


def layer_sweep(page: RasterImage, config: PipelineConfig, layers: Sequence[int], vlm: MicroVLM | None = None,
                dit: MicroDiT | None = None) -> list[tuple[RasterImage, RunTrace]]:
    vlm = vlm if vlm is not None else MicroVLM(config.vlm)
    dit = dit if dit is not None else MicroDiT(config.dit)
    for layer in layers:
        vlm._check_layer(layer)
    return [run_pipeline(page, config, vlm, dit, layer) for layer in layers]


def token_sweep(page: RasterImage, config: PipelineConfig, budgets: Sequence[int], vlm: MicroVLM | None = None,
                dit: MicroDiT | None = None) -> list[tuple[RasterImage, RunTrace]]:
    vlm = vlm if vlm is not None else MicroVLM(config.vlm)
    dit = dit if dit is not None else MicroDiT(config.dit)
    return [run_pipeline(page, replace(config, tokens=n), vlm, dit) for n in budgets]
