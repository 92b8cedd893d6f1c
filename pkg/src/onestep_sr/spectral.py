"""Grid-artifact diagnostics and full-reference metrics (numpy, float64)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import convolve2d

EPS = 1e-12
PSNR_IDENTICAL = math.inf  # returned when the two images are equal


def _as_image(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    if x.ndim != 3:
        raise ValueError(f"expected an HxW or HxWxC image, got shape {x.shape}")
    return x


def luminance(x) -> np.ndarray:
    return _as_image(x).mean(axis=-1)


def power_spectrum(x) -> np.ndarray:
    return np.abs(np.fft.fft2(luminance(x))) ** 2


@dataclass(frozen=True)
class ArtifactReport:
    period: int
    harmonic_energy: float
    total_ac_energy: float
    ratio: float

    def to_dict(self) -> dict:
        return asdict(self)


def harmonic_mask(shape: tuple[int, int], period: int, tolerance: int = 1) -> np.ndarray:
    """Bins within ``tolerance`` of a non-DC point of the lattice spanned by
    multiples of ``N/period`` along each axis (wrap-around aware)."""
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    step_y, step_x = h // period, w // period
    for ky in range(period):
        for kx in range(period):
            if ky == 0 and kx == 0:
                continue
            for dy in range(-tolerance, tolerance + 1):
                for dx in range(-tolerance, tolerance + 1):
                    mask[(ky * step_y + dy) % h, (kx * step_x + dx) % w] = True
    mask[0, 0] = False
    return mask


def grid_artifact_energy(x, period: int, tolerance: int = 1) -> ArtifactReport:
    """Fraction of non-DC luminance power sitting on the ``period``-pixel harmonic lattice."""
    img = _as_image(x)
    h, w, _ = img.shape
    if period < 2:
        raise ValueError("period must be >= 2")
    if h % period or w % period:
        raise ValueError(f"image {h}x{w} is not divisible by period {period}")
    power = power_spectrum(img)
    ac = power.copy()
    ac[0, 0] = 0.0
    total = float(ac.sum())
    harmonic = float(ac[harmonic_mask((h, w), period, tolerance)].sum())
    return ArtifactReport(period, harmonic, total, harmonic / max(total, EPS))


def radial_power_spectrum(x, n_bins: int) -> np.ndarray:
    """``(n_bins, 2)`` array of (bin-centre radial frequency in cycles/pixel, mean power)."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    power = power_spectrum(x)
    h, w = power.shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.sqrt(fy**2 + fx**2)
    edges = np.linspace(0.0, radius.max() * (1 + 1e-9), n_bins + 1)
    idx = np.clip(np.digitize(radius.ravel(), edges) - 1, 0, n_bins - 1)
    sums = np.bincount(idx, weights=power.ravel(), minlength=n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    means = np.divide(sums, counts, out=np.zeros(n_bins), where=counts > 0)
    centres = 0.5 * (edges[:-1] + edges[1:])
    return np.stack([centres, means], axis=1)


def spectrum_image(x) -> np.ndarray:
    """Log amplitude, DC centred, scaled to [0, 1]; shape ``(H, W, 1)``."""
    amp = np.fft.fftshift(np.abs(np.fft.fft2(luminance(x))))
    logamp = np.log1p(amp)
    lo, hi = logamp.min(), logamp.max()
    out = (logamp - lo) / (hi - lo) if hi > lo else np.zeros_like(logamp)
    return out[..., None]


# ---------------------------------------------------------------------------
# metrics


def psnr(x, y, peak: float = 1.0) -> float:
    """PSNR in dB; ``PSNR_IDENTICAL`` (+inf) when the images are equal."""
    a, b = _as_image(x), _as_image(y)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be > 0")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(peak**2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(x, y, data_range: float = 1.0, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows, averaged over channels."""
    a, b = _as_image(x), _as_image(y)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    win = gaussian_window()
    if a.shape[0] < win.shape[0] or a.shape[1] < win.shape[1]:
        raise ValueError("images must be at least 11x11 for SSIM")
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2

    def filt(img):
        return convolve2d(img, win[::-1, ::-1], mode="valid")

    scores = []
    for ch in range(a.shape[-1]):
        p, q = a[..., ch], b[..., ch]
        mu_p, mu_q = filt(p), filt(q)
        var_p = filt(p * p) - mu_p**2
        var_q = filt(q * q) - mu_q**2
        cov = filt(p * q) - mu_p * mu_q
        num = (2 * mu_p * mu_q + c1) * (2 * cov + c2)
        den = (mu_p**2 + mu_q**2 + c1) * (var_p + var_q + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))
