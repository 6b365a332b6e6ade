"""Procedural color-binding task: a color-card page should generate a solid image of its swatch color."""
from __future__ import annotations

import time
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .bundle import ConditioningBundle
from .dit import DitConfig, DitTrainer, MicroDiT, collate, image_to_latent, sample
from .pages import PageElement, PageSpec, render_page
from .pipeline import PipelineConfig, build_bundle
from .raster import RasterImage, new_canvas
from .vlm import MicroVLM, VlmConfig

TOY_TEMPLATE = "color?"


@dataclass(frozen=True)
class ToyConfig:
    page_size: int = 64
    n_train_colors: int = 256
    n_heldout: int = 10
    mode: str = "full-final"
    tokens: int = 8
    layer: int | None = None
    train_steps: int = 2000
    batch_size: int = 16
    lr: float = 2e-3
    p_uncond: float = 0.1
    seed: int = 0
    heldout_seed: int = 1
    sample_steps: int = 30
    guidance: float = 1.0
    dit: DitConfig = field(default_factory=DitConfig)
    vlm: VlmConfig = field(default_factory=VlmConfig)

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(mode=self.mode, tokens=self.tokens, layer=self.layer, template=TOY_TEMPLATE,
                              system_text="", dit=self.dit, vlm=self.vlm)


def color_card(rgb, size: int = 64) -> RasterImage:
    return render_page(PageSpec("color-card", [PageElement.swatch(tuple(int(c) for c in rgb))], size, size))


def solid(rgb, size: int = 64) -> RasterImage:
    return new_canvas(size, size, tuple(int(c) for c in rgb))


def random_colors(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 256, size=(n, 3))


def build_bank(vlm: MicroVLM, colors: np.ndarray, config: ToyConfig, layer: int | None = None) -> list[ConditioningBundle]:
    pc = config.pipeline_config()
    return [build_bundle(color_card(c, config.page_size), pc, vlm, layer)[0] for c in colors]


@dataclass
class ToyResult:
    dit: MicroDiT
    vlm: MicroVLM
    losses: list[float]
    train_colors: np.ndarray
    seconds: float
    config: ToyConfig

    def trailing_means(self, window: int = 100) -> tuple[float, float]:
        return float(np.mean(self.losses[:window])), float(np.mean(self.losses[-window:]))


def train_toy(config: ToyConfig = ToyConfig(), vlm: MicroVLM | None = None,
              log: Callable[[int, float], None] | None = None, log_every: int = 100) -> ToyResult:
    """Train a fresh generator on frozen encoder bundles of random color cards."""
    torch.manual_seed(config.seed)
    vlm = vlm if vlm is not None else MicroVLM(config.vlm)
    colors = random_colors(config.n_train_colors, config.seed)
    bank = build_bank(vlm, colors, config)
    cond, mask = collate(bank)
    dc = config.dit
    x0 = torch.tensor(np.stack([image_to_latent(solid(c, dc.grid_h * dc.pixel_scale), dc.grid_h, dc.grid_w)
                                for c in colors]), dtype=torch.float32).reshape(len(colors), -1, dc.channels)
    dit = MicroDiT(dc)
    trainer = DitTrainer(dit, lr=config.lr, seed=config.seed, p_uncond=config.p_uncond)
    rng = np.random.default_rng(config.seed)
    losses = []
    t0 = time.perf_counter()
    for step in range(config.train_steps):
        idx = torch.from_numpy(rng.integers(0, len(colors), size=config.batch_size))
        losses.append(trainer.train_step_tensors(cond[idx], mask[idx], x0[idx]))
        if log is not None and (step + 1) % log_every == 0:
            log(step + 1, float(np.mean(losses[-log_every:])))
    dit.eval()
    return ToyResult(dit, vlm, losses, colors, time.perf_counter() - t0, config)


@dataclass
class ColorMatch:
    expected: tuple[int, int, int]
    mean_color: tuple[float, float, float]
    distance: float  # max per-channel absolute difference

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_colors(dit: MicroDiT, vlm: MicroVLM, colors: Sequence, config: ToyConfig,
                    layer: int | None = None) -> list[ColorMatch]:
    out = []
    for c, bundle in zip(colors, build_bank(vlm, np.asarray(colors), config, layer)):
        img = sample(dit, bundle, config.sample_steps, config.guidance, config.dit.seed).image
        mean = img.pixels.reshape(-1, 3).mean(axis=0)
        exp = tuple(int(v) for v in c)
        out.append(ColorMatch(exp, tuple(float(v) for v in mean), float(np.max(np.abs(mean - np.asarray(exp))))))
    return out


def heldout_colors(config: ToyConfig) -> np.ndarray:
    return random_colors(config.n_heldout, config.heldout_seed + 10_000)
