"""Low-rank adapters on frozen linear maps."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class LowRankAdapter(nn.Module):
    """Trainable rank-``r`` update ``B @ A``; ``B`` starts at zero so the
    adapter is an exact no-op until trained."""

    def __init__(self, d_in: int, d_out: int, rank: int):
        super().__init__()
        if rank < 1:
            raise ValueError("adapter rank must be >= 1")
        self.rank = rank
        self.A = nn.Parameter(torch.empty(rank, d_in))
        self.B = nn.Parameter(torch.zeros(d_out, rank))

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        bound = 1.0 / math.sqrt(self.A.shape[1])
        with torch.no_grad():
            self.A.uniform_(-bound, bound, generator=generator)
            self.B.zero_()

    def delta(self) -> torch.Tensor:
        return self.B @ self.A

    def forward(self, x):
        return F.linear(F.linear(x, self.A), self.B)


def apply_lora(base_weight, adapter: LowRankAdapter, x, bias=None):
    """``(W + B A) x`` evaluated through the low-rank path; ``W`` gets no gradient."""
    w = base_weight.detach()
    d_out, d_in = w.shape
    if adapter.A.shape[1] != d_in or adapter.B.shape[0] != d_out:
        raise ValueError(
            f"adapter shapes A={tuple(adapter.A.shape)}, B={tuple(adapter.B.shape)} "
            f"do not fit base weight {tuple(w.shape)}"
        )
    if x.shape[-1] != d_in:
        raise ValueError(f"input dim {x.shape[-1]} != {d_in}")
    return F.linear(x, w, bias) + adapter(x)


class LoRALinear(nn.Module):
    """Frozen ``nn.Linear`` with an optional adapter."""

    def __init__(self, d_in: int, d_out: int, rank: int = 0, bias: bool = True):
        super().__init__()
        self.base = nn.Linear(d_in, d_out, bias=bias)
        self.base.requires_grad_(False)
        self.adapter = LowRankAdapter(d_in, d_out, rank) if rank > 0 else None

    def forward(self, x):
        if self.adapter is None:
            return self.base(x)
        return apply_lora(self.base.weight, self.adapter, x, self.base.bias)

    def merged_weight(self) -> torch.Tensor:
        w = self.base.weight
        return w if self.adapter is None else w + self.adapter.delta()
