"""PatchGAN-style discriminator on a frozen large-kernel conv backbone."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class DiscriminatorConfig:
    channels: tuple[int, ...] = (16, 32, 64)
    kernels: tuple[int, ...] = (7, 7, 5)
    seed: int = 1

    def __post_init__(self):
        if len(self.channels) != len(self.kernels) or not self.channels:
            raise ValueError("channels and kernels must be non-empty and equally long")


@dataclass
class DiscriminatorOutput:
    logit_maps: list[torch.Tensor]

    def __post_init__(self):
        if len(self.logit_maps) < 2:
            raise ValueError("a discriminator must emit at least two logit maps")

    def __iter__(self):
        return iter(self.logit_maps)

    def __len__(self):
        return len(self.logit_maps)

    def __getitem__(self, i):
        return self.logit_maps[i]


class Discriminator(nn.Module):
    """Stride-2 conv stages (frozen after seeded init) feed trainable 1x1
    heads, one per stage, plus a linear head on globally pooled features."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig(), in_channels: int = 3):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            stages, c_prev = [], in_channels
            for c, k in zip(cfg.channels, cfg.kernels):
                stages.append(nn.Sequential(nn.Conv2d(c_prev, c, k, stride=2, padding=k // 2), nn.GELU()))
                c_prev = c
            self.backbone = nn.ModuleList(stages)
            self.heads = nn.ModuleList(nn.Conv2d(c, 1, 1) for c in cfg.channels)
            self.pool_head = nn.Linear(cfg.channels[-1], 1)
        self.backbone.requires_grad_(False)

    @property
    def stride(self) -> int:
        return 2

    def head_parameters(self):
        return list(self.heads.parameters()) + list(self.pool_head.parameters())

    def forward(self, x) -> DiscriminatorOutput:
        if x.dim() == 3:
            x = x[None]
        if x.dim() != 4:
            raise ValueError(f"expected (B, H, W, C) images, got shape {tuple(x.shape)}")
        h = (x.movedim(-1, 1) - 0.5) * 2.0
        maps = []
        for stage, head in zip(self.backbone, self.heads):
            h = stage(h)
            maps.append(head(h)[:, 0])
        pooled = self.pool_head(h.mean(dim=(-2, -1)))
        maps.append(pooled[:, :, None])
        return DiscriminatorOutput(maps)


def discriminator_forward(x, params: Discriminator) -> DiscriminatorOutput:
    return params(x)
