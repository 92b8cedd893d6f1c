"""Patchified transformer generator with joint attention over semantic tokens."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .lora import LoRALinear, LowRankAdapter


@dataclass(frozen=True)
class GeneratorConfig:
    patch_size: int = 2
    token_dim: int = 128
    n_blocks: int = 4
    n_heads: int = 4
    n_semantic_tokens: int = 4
    lora_rank: int = 4
    seed: int = 0
    latent_channels: int = 12
    mlp_ratio: int = 2
    semantic_channels: int = 32

    def __post_init__(self):
        if self.token_dim % self.n_heads:
            raise ValueError(f"n_heads={self.n_heads} must divide token_dim={self.token_dim}")
        if self.token_dim % 2:
            raise ValueError("token_dim must be even for the sinusoidal embeddings")
        if self.patch_size < 1 or self.n_blocks < 0 or self.n_semantic_tokens < 1:
            raise ValueError("invalid generator geometry")
        if self.lora_rank < 0:
            raise ValueError("lora_rank must be >= 0")

    @property
    def patch_dim(self) -> int:
        return self.latent_channels * self.patch_size**2


def timestep_embedding(t, dim: int, dtype=torch.float32) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=dtype).reshape(-1)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=dtype) / half)
    args = 1000.0 * t[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def grid_position_embedding(h: int, w: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed 2D sin-cos table of shape ``(h*w, dim)`` in raster order."""
    quarter = dim // 4
    omega = 1.0 / 10000 ** (torch.arange(quarter, dtype=dtype) / max(quarter, 1))
    ys, xs = torch.meshgrid(torch.arange(h, dtype=dtype), torch.arange(w, dtype=dtype), indexing="ij")
    parts = []
    for coord in (ys.reshape(-1), xs.reshape(-1)):
        ang = coord[:, None] * omega[None]
        parts += [torch.sin(ang), torch.cos(ang)]
    emb = torch.cat(parts, dim=-1)
    if emb.shape[1] < dim:
        emb = F.pad(emb, (0, dim - emb.shape[1]))
    return emb


class Block(nn.Module):
    def __init__(self, dim: int, n_heads: int, mlp_ratio: int, rank: int):
        super().__init__()
        self.n_heads = n_heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = LoRALinear(dim, 3 * dim, rank)
        self.proj = LoRALinear(dim, dim, rank)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = LoRALinear(dim, mlp_ratio * dim, rank)
        self.fc2 = LoRALinear(mlp_ratio * dim, dim, rank)

    def forward(self, x):
        b, n, d = x.shape
        q, k, v = self.qkv(self.norm1(x)).reshape(b, n, 3, self.n_heads, d // self.n_heads).permute(2, 0, 3, 1, 4)
        attn = F.scaled_dot_product_attention(q, k, v)
        x = x + self.proj(attn.transpose(1, 2).reshape(b, n, d))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class SemanticEncoder(nn.Module):
    """Frozen strided conv encoder pooled to a few tokens, then a trainable
    adapter MLP into the generator's token width."""

    def __init__(self, cfg: GeneratorConfig, in_channels: int = 3):
        super().__init__()
        c = cfg.semantic_channels
        self.encoder = nn.Sequential(
            nn.Conv2d(in_channels, c // 2, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(c // 2, c, 3, stride=2, padding=1),
            nn.GELU(),
        )
        self.encoder.requires_grad_(False)
        self.pool_hw = _factor_pair(cfg.n_semantic_tokens)
        self.adapter = nn.Sequential(nn.Linear(c, cfg.token_dim), nn.GELU(), nn.Linear(cfg.token_dim, cfg.token_dim))

    def raw_features(self, x_lr):
        x = x_lr.movedim(-1, -3)
        feats = F.adaptive_avg_pool2d(self.encoder(x), self.pool_hw)
        return feats.flatten(-2).transpose(-1, -2)

    def forward(self, x_lr):
        return self.adapter(self.raw_features(x_lr))


def _factor_pair(n: int) -> tuple[int, int]:
    a = int(math.isqrt(n))
    while n % a:
        a -= 1
    return a, n // a


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.token_dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.in_proj = nn.Linear(cfg.patch_dim, d)
            self.blocks = nn.ModuleList(
                Block(d, cfg.n_heads, cfg.mlp_ratio, cfg.lora_rank) for _ in range(cfg.n_blocks)
            )
            self.semantic = SemanticEncoder(cfg)
            self.out_norm = nn.LayerNorm(d)
            self.out_proj = nn.Linear(d, cfg.patch_dim)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

        # base weights stand in for a pretrained model: frozen
        self.in_proj.requires_grad_(False)
        for blk in self.blocks:
            blk.requires_grad_(False)
        adapter_gen = torch.Generator().manual_seed(cfg.seed + 7919)
        for m in self.modules():
            if isinstance(m, LowRankAdapter):
                m.reset_parameters(adapter_gen)
                m.requires_grad_(True)

    def head_parameters(self):
        return list(self.out_norm.parameters()) + list(self.out_proj.parameters())

    def adapter_parameters(self):
        return [p for m in self.modules() if isinstance(m, LowRankAdapter) for p in m.parameters()]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def forward(self, z_tokens, semantic_tokens, t, grid_hw=None):
        squeeze = z_tokens.dim() == 2
        if squeeze:
            z_tokens, semantic_tokens = z_tokens[None], semantic_tokens[None]
        b, n, dim_in = z_tokens.shape
        if dim_in != self.cfg.patch_dim:
            raise ValueError(f"token dim {dim_in} != expected {self.cfg.patch_dim}")
        if semantic_tokens.shape[-1] != self.cfg.token_dim:
            raise ValueError(f"semantic token dim {semantic_tokens.shape[-1]} != {self.cfg.token_dim}")
        if grid_hw is None:
            side = math.isqrt(n)
            if side * side != n:
                raise ValueError("grid_hw is required for non-square token grids")
            grid_hw = (side, side)
        t = torch.as_tensor(t, dtype=z_tokens.dtype)
        if float(t.min()) < 0 or float(t.max()) > 1:
            raise ValueError("t must lie in [0, 1]")

        d = self.cfg.token_dim
        temb = timestep_embedding(t, d, z_tokens.dtype)
        temb = temb.expand(b, d)[:, None] if temb.shape[0] == 1 else temb[:, None]
        x = self.in_proj(z_tokens) + grid_position_embedding(*grid_hw, d, z_tokens.dtype)
        h = torch.cat([x, semantic_tokens.expand(b, -1, -1)], dim=1) + temb
        for blk in self.blocks:
            h = blk(h)
        out = self.out_proj(self.out_norm(h[:, :n]))
        return out[0] if squeeze else out


def generator_forward(z_tokens, semantic_tokens, t, params: Generator, grid_hw=None):
    return params(z_tokens, semantic_tokens, t, grid_hw)


def semantic_encode(x_lr, params: Generator):
    """``(..., h, w, 3)`` LR image to ``(..., n_semantic_tokens, token_dim)``."""
    squeeze = x_lr.dim() == 3
    out = params.semantic(x_lr[None] if squeeze else x_lr)
    return out[0] if squeeze else out
