"""LR synthesis: a first-order blur -> area downsample -> noise -> quantize chain,
plus a procedural paired dataset for desk-scale training."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

FAMILIES = ("sinusoid", "checkerboard", "filtered_noise", "flat")

# texture scales in HR pixels. Sinusoid frequencies reach just past the
# Nyquist limit of a 4x-downsampled image (0.125 cycles/pixel): most of the
# texture is recoverable from the LR input and a thin band is aliased.
SINUSOID_FREQ_RANGE = (0.03, 0.15)  # cycles per pixel
CHECKER_CELL_RANGE = (4.0, 12.0)  # cell side
NOISE_SMOOTHING_RANGE = (0.6, 2.0)  # Gaussian sigma


@dataclass(frozen=True)
class DegradationConfig:
    scale: int = 4
    blur_sigma_range: tuple[float, float] = (0.4, 1.6)
    noise_sigma_range: tuple[float, float] = (0.0, 0.02)
    quantize_levels: int | None = 64
    seed: int = 0

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        for name in ("blur_sigma_range", "noise_sigma_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi, got {(lo, hi)}")
        if self.quantize_levels is not None and self.quantize_levels < 2:
            raise ValueError("quantize_levels must be >= 2 or None")


@dataclass
class PairedSample:
    x_hr: np.ndarray
    x_lr: np.ndarray
    sample_seed: int
    family: str = ""


def sample_rng(seed: int, sample_seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed on (seed, sample_seed, stream)."""
    key = np.random.SeedSequence([seed, sample_seed, stream]).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def area_downsample(x: np.ndarray, scale: int) -> np.ndarray:
    h, w, c = x.shape
    if h % scale or w % scale:
        raise ValueError(f"image {h}x{w} is not divisible by scale {scale}")
    return x.reshape(h // scale, scale, w // scale, scale, c).mean(axis=(1, 3))


def _check_image(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected an HxWxC image, got shape {x.shape}")
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    return x


def degrade(x_hr: np.ndarray, cfg: DegradationConfig, sample_seed: int) -> np.ndarray:
    x = _check_image(x_hr)
    h, w, _ = x.shape
    if h % cfg.scale or w % cfg.scale:
        raise ValueError(f"image {h}x{w} is not divisible by scale {cfg.scale}")

    rng = sample_rng(cfg.seed, sample_seed)
    blur_sigma = rng.uniform(*cfg.blur_sigma_range)
    noise_sigma = rng.uniform(*cfg.noise_sigma_range)

    if blur_sigma > 0:
        x = gaussian_filter(x, sigma=(blur_sigma, blur_sigma, 0.0), mode="reflect")
    x = area_downsample(x, cfg.scale)
    noise = rng.standard_normal(x.shape)
    if noise_sigma > 0:
        x = x + noise_sigma * noise
    x = np.clip(x, 0.0, 1.0)
    if cfg.quantize_levels is not None:
        q = cfg.quantize_levels - 1
        x = np.round(x * q) / q
    return x


# ---------------------------------------------------------------------------
# procedural textures


def _grid(size: int):
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    return yy, xx


def _colorize(gray: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    lo = rng.uniform(0.0, 0.4, size=3)
    hi = rng.uniform(0.6, 1.0, size=3)
    return lo + gray[..., None] * (hi - lo)


def _sinusoid(size, rng):
    yy, xx = _grid(size)
    g = np.zeros((size, size))
    n_waves = int(rng.integers(1, 4))
    for _ in range(n_waves):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(*SINUSOID_FREQ_RANGE)
        phase = rng.uniform(0, 2 * np.pi)
        g += np.cos(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    g = 0.5 + 0.5 * g / n_waves
    return _colorize(g, rng)


def _checkerboard(size, rng):
    yy, xx = _grid(size)
    cell = rng.uniform(*CHECKER_CELL_RANGE)
    theta = rng.uniform(0, np.pi / 2)
    u = xx * np.cos(theta) + yy * np.sin(theta) + rng.uniform(0, cell)
    v = -xx * np.sin(theta) + yy * np.cos(theta) + rng.uniform(0, cell)
    g = (np.floor(u / cell) + np.floor(v / cell)) % 2
    return _colorize(g, rng)


def _filtered_noise(size, rng):
    g = gaussian_filter(rng.standard_normal((size, size)), sigma=rng.uniform(*NOISE_SMOOTHING_RANGE), mode="wrap")
    g = (g - g.min()) / max(g.max() - g.min(), 1e-12)
    return _colorize(g, rng)


def _flat(size, rng):
    yy, xx = _grid(size)
    n_regions = int(rng.integers(3, 7))
    sites = rng.uniform(0, size, size=(n_regions, 2))
    colors = rng.uniform(0.05, 0.95, size=(n_regions, 3))
    d = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    return colors[np.argmin(d, axis=-1)]


_GENERATORS = {
    "sinusoid": _sinusoid,
    "checkerboard": _checkerboard,
    "filtered_noise": _filtered_noise,
    "flat": _flat,
}


def procedural_image(size: int, family: str, rng: np.random.Generator) -> np.ndarray:
    return np.clip(_GENERATORS[family](size, rng), 0.0, 1.0)


def make_sample(index: int, hr_size: int, cfg: DegradationConfig, families=FAMILIES) -> PairedSample:
    rng = sample_rng(cfg.seed, index, stream=1)
    family = families[int(rng.integers(len(families)))]
    x_hr = procedural_image(hr_size, family, rng)
    return PairedSample(x_hr=x_hr, x_lr=degrade(x_hr, cfg, index), sample_seed=index, family=family)


def make_toy_dataset(
    n: int,
    hr_size: int,
    cfg: DegradationConfig,
    families: tuple[str, ...] = FAMILIES,
    offset: int = 0,
    jobs: int = 1,
) -> list[PairedSample]:
    """Generate ``n`` HR textures and their degraded LR partners.

    Sample ``i`` depends only on ``(cfg.seed, offset + i)``, so held-out
    sets are built by shifting ``offset`` and generation order is irrelevant.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if hr_size % cfg.scale:
        raise ValueError(f"hr_size {hr_size} is not divisible by scale {cfg.scale}")
    unknown = set(families) - set(FAMILIES)
    if unknown:
        raise ValueError(f"unknown texture families: {sorted(unknown)}")
    indices = range(offset, offset + n)
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda i: make_sample(i, hr_size, cfg, families), indices))
    return [make_sample(i, hr_size, cfg, families) for i in indices]


def export_dataset(samples: list[PairedSample], out_dir: Path) -> Path:
    """Write paired PNGs plus ``index.csv`` (id, hr_path, lr_path, sample_seed)."""
    from .imageio import write_png

    out_dir = Path(out_dir)
    (out_dir / "hr").mkdir(parents=True, exist_ok=True)
    (out_dir / "lr").mkdir(parents=True, exist_ok=True)
    index_path = out_dir / "index.csv"
    with open(index_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "hr_path", "lr_path", "sample_seed"])
        for i, s in enumerate(samples):
            hr_rel, lr_rel = f"hr/{i:05d}.png", f"lr/{i:05d}.png"
            write_png(out_dir / hr_rel, s.x_hr)
            write_png(out_dir / lr_rel, s.x_lr)
            writer.writerow([i, hr_rel, lr_rel, s.sample_seed])
    return index_path
