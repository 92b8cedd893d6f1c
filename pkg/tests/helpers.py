"""Shared test utilities: finite-difference gradients and reference oracles."""

from __future__ import annotations

import itertools

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

FD_STEP = 1e-5
FD_RTOL = 1e-4


def central_difference(fn, x: torch.Tensor, h: float = FD_STEP) -> torch.Tensor:
    """Numerical gradient of scalar ``fn`` at ``x`` by central differences."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat, gflat = x.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = float(fn(x))
            flat[i] = orig - h
            down = float(fn(x))
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
    return grad


def analytic_gradient(fn, x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().requires_grad_(True)
    (g,) = torch.autograd.grad(fn(x), x)
    return g


def gradient_rel_error(fn, x: torch.Tensor) -> float:
    """``|analytic - numeric| / |numeric|`` in the Euclidean norm."""
    num = central_difference(fn, x)
    ana = analytic_gradient(fn, x)
    return float((ana - num).norm() / num.norm().clamp_min(1e-12))


def naive_dft2(a: np.ndarray) -> np.ndarray:
    n, m = a.shape
    out = np.zeros((n, m), dtype=complex)
    for u in range(n):
        for v in range(m):
            acc = 0j
            for x in range(n):
                for y in range(m):
                    acc += a[x, y] * np.exp(-2j * np.pi * (u * x / n + v * y / m))
            out[u, v] = acc
    return out


def ot_1d(a: np.ndarray, b: np.ndarray) -> float:
    """Exact W1 between equal-size 1D empirical measures via an assignment solver."""
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def ot_1d_bruteforce(a: np.ndarray, b: np.ndarray) -> float:
    return min(float(np.abs(a - b[list(p)]).mean()) for p in itertools.permutations(range(len(b))))


def sliced_oracle(points_a: np.ndarray, points_b: np.ndarray, directions: np.ndarray) -> float:
    return float(np.mean([ot_1d(points_a @ d, points_b @ d) for d in directions]))


def ssim_direct(x: np.ndarray, y: np.ndarray, data_range: float = 1.0) -> float:
    """Loop-based SSIM: explicit weighted sums over every fully contained window."""
    size, sigma = 11, 1.5
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    chans = []
    for ch in range(x.shape[2]):
        a, b = x[..., ch], y[..., ch]
        vals = []
        for i in range(a.shape[0] - size + 1):
            for j in range(a.shape[1] - size + 1):
                pa, pb = a[i:i + size, j:j + size], b[i:i + size, j:j + size]
                mu_a, mu_b = (w * pa).sum(), (w * pb).sum()
                va = (w * (pa - mu_a) ** 2).sum()
                vb = (w * (pb - mu_b) ** 2).sum()
                cov = (w * (pa - mu_a) * (pb - mu_b)).sum()
                vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2)))
        chans.append(np.mean(vals))
    return float(np.mean(chans))
