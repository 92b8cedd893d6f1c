"""Lossless space-to-depth latent codec and DiT-style patchification.

Images and latent grids are channel-last: ``(..., H, W, C)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class LatentCodec:
    f: int = 2

    def __post_init__(self):
        if self.f < 1:
            raise ValueError("codec scale factor f must be >= 1")

    def encode(self, x):
        return encode_latent(x, self)

    def decode(self, z):
        return decode_latent(z, self)


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x)


def _space_to_depth(x: torch.Tensor, f: int) -> torch.Tensor:
    *lead, h, w, c = x.shape
    if h % f or w % f:
        raise ValueError(f"spatial dims {h}x{w} are not divisible by {f}")
    n = len(lead)
    x = x.reshape(*lead, h // f, f, w // f, f, c)
    # (..., h/f, w/f, dy, dx, c): block entries in raster order, channels fastest
    x = x.permute(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return x.reshape(*lead, h // f, w // f, f * f * c)


def _depth_to_space(z: torch.Tensor, f: int) -> torch.Tensor:
    *lead, h, w, cc = z.shape
    if cc % (f * f):
        raise ValueError(f"channel count {cc} is not divisible by f^2={f * f}")
    c = cc // (f * f)
    n = len(lead)
    z = z.reshape(*lead, h, w, f, f, c)
    z = z.permute(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return z.reshape(*lead, h * f, w * f, c)


def encode_latent(x, codec: LatentCodec) -> torch.Tensor:
    """``(..., H, W, C) -> (..., H/f, W/f, C*f*f)``."""
    return _space_to_depth(_as_tensor(x), codec.f)


def decode_latent(z, codec: LatentCodec) -> torch.Tensor:
    return _depth_to_space(_as_tensor(z), codec.f)


def patchify(z, p: int) -> torch.Tensor:
    """Grid ``(..., h, w, c)`` to raster-ordered tokens ``(..., h*w/p^2, p*p*c)``."""
    z = _as_tensor(z)
    *lead, h, w, _ = z.shape
    if h % p or w % p:
        raise ValueError(f"latent grid {h}x{w} is not divisible by patch size {p}")
    tokens = _space_to_depth(z, p)
    return tokens.reshape(*lead, (h // p) * (w // p), tokens.shape[-1])


def unpatchify(tokens, p: int, grid_hw: tuple[int, int]) -> torch.Tensor:
    tokens = _as_tensor(tokens)
    h, w = grid_hw
    *lead, n_tok, dim = tokens.shape
    if h % p or w % p or n_tok != (h // p) * (w // p):
        raise ValueError(f"{n_tok} tokens do not tile a {h}x{w} grid with patch size {p}")
    return _depth_to_space(tokens.reshape(*lead, h // p, w // p, dim), p)
