"""Fixed multi-stage feature extractor shared by the perceptual and frequency losses.

Stage table (input H x W x 3):

    stage  conv          stride  output
    1      3x3, 3 -> 8   1       8  x H   x W
    2      3x3, 8 -> 16  2       16 x H/2 x W/2
    3      3x3, 16 -> 32 2       32 x H/4 x W/4
"""

from __future__ import annotations

import torch
from torch import nn

PHI_SEED = 20240917
PHI_STAGES = ((3, 8, 1), (8, 16, 2), (16, 32, 2))


class FeatureExtractor(nn.Module):
    def __init__(self, seed: int = PHI_SEED):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.stages = nn.ModuleList(
                nn.Sequential(nn.Conv2d(c_in, c_out, 3, stride=s, padding=1), nn.GELU())
                for c_in, c_out, s in PHI_STAGES
            )
        self.requires_grad_(False)
        self.eval()

    def forward(self, x) -> list[torch.Tensor]:
        """``(B, H, W, 3)`` or ``(H, W, 3)`` -> list of ``(B, C, h, w)`` maps."""
        if x.dim() == 3:
            x = x[None]
        h = (x.movedim(-1, 1) - 0.5) * 2.0
        feats = []
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats


_CACHE: dict[torch.dtype, FeatureExtractor] = {}


def default_extractor(dtype=torch.float32) -> FeatureExtractor:
    if dtype not in _CACHE:
        base = _CACHE.get(torch.float32) or FeatureExtractor()
        _CACHE[torch.float32] = base
        if dtype != torch.float32:
            ext = FeatureExtractor()
            ext.load_state_dict(base.state_dict())
            _CACHE[dtype] = ext.to(dtype)
    return _CACHE[dtype]


def feature_extract(x) -> list[torch.Tensor]:
    return default_extractor(x.dtype)(x)
