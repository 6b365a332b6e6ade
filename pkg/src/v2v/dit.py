"""Miniature diffusion transformer over an 8x8x4 latent grid.

Latent tokens self-attend and cross-attend to a ConditioningBundle in every
block. Training regresses the flow velocity ``noise - x0`` on the linear path
``x_t = (1 - t) x0 + t noise``; sampling integrates that field from t=1 to
t=0 with Euler steps and classifier-free guidance.
"""
from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .bundle import ConditioningBundle
from .errors import ConditioningError, NumericFailureError
from .probe import AttentionRecord
from .raster import RasterImage
from .tensorio import read_tensors, write_tensors

# Fixed linear decoder from a latent cell (4 channels) to RGB in [-1, 1];
# the fourth channel adds a shared brightness offset.
DECODER = np.array([[1.0, 0.0, 0.0, 0.25],
                    [0.0, 1.0, 0.0, 0.25],
                    [0.0, 0.0, 1.0, 0.25]])
ENCODER = np.linalg.pinv(DECODER)


@dataclass(frozen=True)
class DitConfig:
    grid_h: int = 8
    grid_w: int = 8
    channels: int = 4
    model_dim: int = 64
    blocks: int = 2
    heads: int = 4
    cond_dim: int = 64
    steps: int = 30
    guidance: float = 4.0
    seed: int = 42
    init_seed: int = 0
    pixel_scale: int = 8

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.guidance < 0:
            raise ValueError(f"guidance scale must be >= 0, got {self.guidance}")
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")
        if self.channels != DECODER.shape[1]:
            raise ValueError(f"the fixed decoder expects {DECODER.shape[1]} latent channels")


def latent_to_image(z: np.ndarray, scale: int = 8) -> RasterImage:
    rgb = np.clip(np.rint(127.5 * (1.0 + z @ DECODER.T)), 0, 255).astype(np.uint8)
    return RasterImage(np.kron(rgb, np.ones((scale, scale, 1), dtype=np.uint8)))


def image_to_latent(img: RasterImage, grid_h: int = 8, grid_w: int = 8) -> np.ndarray:
    """Block-average the image onto the latent grid and invert the decoder (least norm)."""
    h, w = img.height // grid_h, img.width // grid_w
    px = img.pixels[: h * grid_h, : w * grid_w].astype(np.float64) / 127.5 - 1.0
    cells = px.reshape(grid_h, h, grid_w, w, 3).mean(axis=(1, 3))
    return cells @ ENCODER.T


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    args = 1000.0 * t[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class Attention(nn.Module):
    """Multi-head attention; keys/values come from ``context`` (self-attention when None)."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.out = nn.Linear(dim, dim)
        self.observers: list[Callable[[torch.Tensor], None]] = []

    def forward(self, x, context=None, pad_mask=None):
        B, T, D = x.shape
        ctx = x if context is None else context
        S = ctx.shape[1]
        hd = D // self.heads
        q = self.q(x).view(B, T, self.heads, hd).transpose(1, 2)
        k, v = self.kv(ctx).split(D, dim=-1)
        k = k.view(B, S, self.heads, hd).transpose(1, 2)
        v = v.view(B, S, self.heads, hd).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        if pad_mask is not None:
            scores = scores.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        probs = torch.softmax(scores, dim=-1)
        for obs in self.observers:
            obs(probs)
        y = (probs @ v).transpose(1, 2).reshape(B, T, D)
        return self.out(y)


class DitBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.fc = nn.Linear(dim, 4 * dim)
        self.proj = nn.Linear(4 * dim, dim)

    def forward(self, x, cond, pad_mask):
        x = x + self.self_attn(self.norm1(x))
        x = x + self.cross_attn(self.norm2(x), cond, pad_mask)
        return x + self.proj(F.gelu(self.fc(self.norm3(x))))


class MicroDiT(nn.Module):
    def __init__(self, config: DitConfig = DitConfig()):
        super().__init__()
        c = config
        self.config = c
        D = c.model_dim
        n_tok = c.grid_h * c.grid_w
        self.in_proj = nn.Linear(c.channels, D)
        self.pos = nn.Parameter(torch.empty(n_tok, D))
        self.t_fc1 = nn.Linear(D, D)
        self.t_fc2 = nn.Linear(D, D)
        self.cond_norm = nn.LayerNorm(c.cond_dim)
        self.cond_proj = nn.Linear(c.cond_dim, D)
        self.null_cond = nn.Parameter(torch.empty(c.cond_dim))
        self.blocks = nn.ModuleList(DitBlock(D, c.heads) for _ in range(c.blocks))
        self.norm_out = nn.LayerNorm(D)
        self.out_proj = nn.Linear(D, c.channels)
        self._recorders: dict[tuple[int, ...], AttentionRecorder] = {}
        self.reset_parameters()

    def reset_parameters(self):
        g = torch.Generator().manual_seed(self.config.init_seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if ".norm" in name or name.startswith("norm") or name.startswith("cond_norm"):
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                elif name.endswith("bias"):
                    p.zero_()
                elif p.dim() == 2 and name not in ("pos",):
                    p.copy_(torch.randn(p.shape, generator=g) / math.sqrt(p.shape[1]))
                else:
                    p.copy_(torch.randn(p.shape, generator=g) * 0.02)

    # -- forward -------------------------------------------------------------
    def embed_condition(self, cond: torch.Tensor) -> torch.Tensor:
        return self.cond_proj(self.cond_norm(cond))

    def null_condition(self, batch: int) -> torch.Tensor:
        return self.null_cond.view(1, 1, -1).expand(batch, 1, -1)

    def forward(self, x, t, cond, pad_mask=None):
        """x: (B, N, C) latent tokens, t: (B,), cond: (B, K, cond_dim), pad_mask: (B, K) True at pad rows."""
        h = self.in_proj(x) + self.pos
        temb = self.t_fc2(F.silu(self.t_fc1(timestep_embedding(t, self.config.model_dim))))
        h = h + temb[:, None, :]
        c = self.embed_condition(cond)
        for block in self.blocks:
            h = block(h, c, pad_mask)
        return self.out_proj(self.norm_out(h))

    # -- instrumentation -----------------------------------------------------
    def attention_hook(self, blocks: Sequence[int] | None = None) -> AttentionRecorder:
        """Install (or return the already installed) recorder for these blocks."""
        key = tuple(sorted(set(range(len(self.blocks)) if blocks is None else blocks)))
        for b in key:
            if not 0 <= b < len(self.blocks):
                raise IndexError(f"block {b} outside [0, {len(self.blocks)})")
        if key not in self._recorders:
            self._recorders[key] = AttentionRecorder(self, key)
        return self._recorders[key]

    def recorders(self) -> list[AttentionRecorder]:
        return list(self._recorders.values())

    # -- checkpoints ---------------------------------------------------------
    def save(self, path) -> int:
        tensors = [(n, p.detach().cpu().numpy()) for n, p in self.named_parameters()]
        return write_tensors(path, tensors, {"config": asdict(self.config)}, kind="micro-dit")

    @classmethod
    def load(cls, path) -> MicroDiT:
        header, tensors = read_tensors(path)
        model = cls(DitConfig(**header["meta"]["config"]))
        with torch.no_grad():
            for n, p in model.named_parameters():
                p.copy_(torch.from_numpy(tensors[n]).to(p.dtype))
        return model


class AttentionRecorder:
    """Collects latent-query -> conditioning-key softmax matrices during sampling.

    Only the conditional branch is recorded; the sampler tells the recorder
    which step it is in and which labels the key columns carry.
    """

    def __init__(self, model: MicroDiT, blocks: tuple[int, ...]):
        self.blocks = blocks
        self.records: list[AttentionRecord] = []
        self.step: int | None = None
        self.labels: list[str] | None = None
        self.active = False
        self._detach = []
        for b in blocks:
            attn = model.blocks[b].cross_attn
            fn = self._observer(b)
            attn.observers.append(fn)
            self._detach.append((attn, fn))

    def _observer(self, block: int):
        def observe(probs: torch.Tensor):
            if not self.active:
                return
            p = probs.detach().to(torch.float64).cpu().numpy()
            for head in range(p.shape[1]):
                self.records.append(AttentionRecord(self.step, block, head, p[0, head].copy(), list(self.labels)))
        return observe

    def clear(self):
        self.records.clear()

    def remove(self):
        for attn, fn in self._detach:
            if fn in attn.observers:
                attn.observers.remove(fn)
        self._detach.clear()


# -- sampling -----------------------------------------------------------------

@dataclass
class SampleResult:
    latent: np.ndarray  # (gh, gw, c)
    image: RasterImage
    trajectory: list[np.ndarray] | None = None


def _bundle_tensors(bundle: ConditioningBundle, dtype) -> tuple[torch.Tensor, torch.Tensor | None]:
    cond = torch.as_tensor(bundle.rows, dtype=dtype)[None]
    mask = bundle.pad_mask
    return cond, (torch.as_tensor(mask)[None] if mask.any() else None)


def combine_guidance(uncond: torch.Tensor, cond: torch.Tensor, scale: float) -> torch.Tensor:
    """u + s (c - u), written as (1 - s) u + s c so s=0 and s=1 return u and c exactly."""
    return (1.0 - scale) * uncond + scale * cond


@torch.no_grad()
def sample(model: MicroDiT, bundle: ConditioningBundle, steps: int | None = None, guidance: float | None = None,
           seed: int | None = None, return_trajectory: bool = False) -> SampleResult:
    c = model.config
    steps = c.steps if steps is None else steps
    guidance = c.guidance if guidance is None else guidance
    seed = c.seed if seed is None else seed
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if len(bundle) == 0 or bundle.pad_mask.all():
        raise ConditioningError("conditioning bundle has no usable rows")
    if bundle.dim != c.cond_dim:
        raise ConditioningError(f"bundle rows have dim {bundle.dim}, generator expects {c.cond_dim}")
    dtype = next(model.parameters()).dtype
    cond, mask = _bundle_tensors(bundle, dtype)
    null = model.null_condition(1)
    g = torch.Generator().manual_seed(seed)
    x = torch.randn((1, c.grid_h * c.grid_w, c.channels), generator=g, dtype=torch.float64).to(dtype)
    ts = torch.linspace(1.0, 0.0, steps + 1, dtype=torch.float64)
    recorders = model.recorders()
    traj = [x[0].numpy().copy()] if return_trajectory else None
    for i in range(steps):
        t = ts[i].to(dtype).expand(1)
        for r in recorders:
            r.step, r.labels, r.active = i, list(bundle.sources), True
        try:
            v_c = model(x, t, cond, mask)
        finally:
            for r in recorders:
                r.active = False
        v = v_c if guidance == 1.0 else combine_guidance(model(x, t, null), v_c, guidance)
        x = x + (ts[i + 1] - ts[i]).to(dtype) * v
        if not torch.isfinite(x).all():
            raise NumericFailureError(f"non-finite latent at denoising step {i}")
        if traj is not None:
            traj.append(x[0].numpy().copy())
    z = x[0].to(torch.float64).numpy().reshape(c.grid_h, c.grid_w, c.channels)
    return SampleResult(z, latent_to_image(z, c.pixel_scale), traj)


# -- training -----------------------------------------------------------------

def collate(bundles: Sequence[ConditioningBundle], dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack bundles into (B, K_max, D) plus a pad mask (True = ignore)."""
    if not bundles:
        raise ValueError("empty batch")
    k = max(len(b) for b in bundles)
    d = bundles[0].dim
    cond = torch.zeros((len(bundles), k, d), dtype=dtype)
    mask = torch.ones((len(bundles), k), dtype=torch.bool)
    for i, b in enumerate(bundles):
        cond[i, : len(b)] = torch.as_tensor(b.rows, dtype=dtype)
        mask[i, : len(b)] = torch.as_tensor(b.pad_mask)
    return cond, mask


def denoising_loss(model: MicroDiT, cond, pad_mask, x0, noise, t, drop=None) -> torch.Tensor:
    """Mean squared velocity error. ``drop[i]`` swaps row i's conditioning for the null vector."""
    if drop is not None and bool(drop.any()):
        cond = cond.clone()
        pad_mask = pad_mask.clone() if pad_mask is not None else torch.zeros(cond.shape[:2], dtype=torch.bool)
        cond[drop] = 0.0
        cond[drop, 0] = model.null_cond.to(cond.dtype)
        pad_mask[drop] = True
        pad_mask[drop, 0] = False
    tt = t.view(-1, 1, 1)
    xt = (1.0 - tt) * x0 + tt * noise
    pred = model(xt, t, cond, pad_mask)
    return F.mse_loss(pred, noise - x0)


class DitTrainer:
    """Adam on the denoising objective. Noise, timesteps and condition
    dropout are drawn from a private seeded generator."""

    def __init__(self, model: MicroDiT, lr: float = 1e-3, seed: int = 0, p_uncond: float = 0.1):
        self.model = model
        self.p_uncond = p_uncond
        self.opt = torch.optim.Adam(model.parameters(), lr=lr)
        self.gen = torch.Generator().manual_seed(seed)

    def train_step(self, batch: Sequence[tuple[ConditioningBundle, RasterImage]], lr: float | None = None) -> float:
        if not batch:
            raise ValueError("empty batch")
        c = self.model.config
        cond, mask = collate([b for b, _ in batch])
        x0 = torch.tensor(np.stack([image_to_latent(img, c.grid_h, c.grid_w) for _, img in batch]),
                          dtype=torch.float32).reshape(len(batch), -1, c.channels)
        return self.train_step_tensors(cond, mask, x0, lr)

    def train_step_tensors(self, cond, mask, x0, lr: float | None = None) -> float:
        if cond.shape[0] == 0:
            raise ValueError("empty batch")
        if lr is not None:
            for group in self.opt.param_groups:
                group["lr"] = lr
        b = x0.shape[0]
        noise = torch.randn(x0.shape, generator=self.gen, dtype=x0.dtype)
        t = torch.rand((b,), generator=self.gen, dtype=x0.dtype)
        drop = torch.rand((b,), generator=self.gen) < self.p_uncond
        self.model.train()
        loss = denoising_loss(self.model, cond, mask, x0, noise, t, drop)
        if not torch.isfinite(loss):
            raise NumericFailureError(f"non-finite training loss {loss.item()}")
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        self.opt.step()
        self.model.eval()
        return float(loss.detach())


# -- gradient verification ----------------------------------------------------

def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    # the floor turns near-zero gradients into an absolute test; central
    # differences carry ~1e-11 roundoff at h=1e-5 on O(1) losses
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(loss_fn: Callable[[], torch.Tensor], params: dict[str, torch.Tensor], h: float = 1e-5,
               max_coords: int | None = 16, seed: int = 0, floor: float = 1e-6) -> dict[str, float]:
    """Compare autograd gradients with central finite differences.

    ``params`` maps a group name to a float64 leaf tensor that ``loss_fn``
    reads. At most ``max_coords`` coordinates per group are probed (chosen
    with a seeded RNG). Returns the max relative error per group.
    """
    for p in params.values():
        if p.dtype != torch.float64:
            raise TypeError("finite-difference checks need float64 parameters")
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    rng = np.random.default_rng(seed)
    out = {}
    with torch.no_grad():
        for (name, p), g in zip(params.items(), grads):
            g = torch.zeros_like(p) if g is None else g
            flat, gflat = p.view(-1), g.reshape(-1)
            n = flat.numel()
            idx = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
            worst = 0.0
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + h
                fp = float(loss_fn())
                flat[i] = orig - h
                fm = float(loss_fn())
                flat[i] = orig
                worst = max(worst, relative_error(float(gflat[i]), (fp - fm) / (2 * h), floor))
            out[name] = worst
    return out


def dit_grad_check(model: MicroDiT, cond, pad_mask, x0, noise, t, drop=None, max_coords: int | None = 16,
                   seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Gradient check of ``denoising_loss`` over every parameter group of a float64 copy of ``model``."""
    import copy

    m = copy.deepcopy(model).double()
    for r in m.recorders():
        r.remove()
    m.eval()
    params = dict(m.named_parameters())
    args = [a.double() if torch.is_tensor(a) and a.is_floating_point() else a for a in (cond, x0, noise, t)]
    cond64, x064, noise64, t64 = args
    return grad_check(lambda: denoising_loss(m, cond64, pad_mask, x064, noise64, t64, drop), params, h,
                      max_coords, seed)
