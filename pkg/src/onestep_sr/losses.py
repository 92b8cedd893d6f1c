"""Generator and discriminator objectives.

Images are channel-last tensors ``(B, H, W, C)`` (a missing batch axis is
allowed). Logit inputs are lists with one tensor per discriminator level,
batch on axis 0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch

from .nets.features import feature_extract
from .seeding import derive_seed, torch_generator

LOG_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 3.0  # perceptual
    lambda2: float = 0.1  # RaGAN generator term
    lambda3: float = 0.002  # FDL; the trainer zeroes it during stage 1
    lambda_r1: float = 10.0
    lambda_phase: float = 1.0
    r1_sigma: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")
        if self.r1_sigma <= 0:
            raise ValueError("r1_sigma must be > 0")


@dataclass
class LossReport:
    step: int = 0
    stage: int = 1
    l1: float = math.nan
    perceptual: float = math.nan
    ragan_g: float = math.nan
    fdl: float = math.nan
    total_g: float = math.nan
    ragan_d: float = math.nan
    r1: float = math.nan
    total_d: float = math.nan

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict:
        return asdict(self)


def _scalar(v) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


# ---------------------------------------------------------------------------
# pixel / feature losses


def l1_loss(x_pred, x_hr):
    _same_shape(x_pred, x_hr)
    return (x_pred - x_hr).abs().mean()


def perceptual_from_features(feats_pred, feats_hr):
    return torch.stack([((a - b) ** 2).mean() for a, b in zip(feats_pred, feats_hr)]).mean()


def perceptual_loss(x_pred, x_hr, extractor=None):
    """Squared distance between fixed-extractor features, averaged over stages."""
    _same_shape(x_pred, x_hr)
    phi = extractor or feature_extract
    return perceptual_from_features(phi(x_pred), phi(x_hr))


# ---------------------------------------------------------------------------
# relativistic average GAN


def _levels(logits) -> list[torch.Tensor]:
    maps = list(getattr(logits, "logit_maps", logits))
    if not maps:
        raise ValueError("empty logit list")
    return [m.reshape(1) if m.dim() == 0 else m for m in maps]


def _relativistic(pos, neg):
    """-E[log g(pos, neg)] - E[log(1 - g(neg, pos))] averaged over levels,
    with g(x, y) = sigmoid(C(x) - batch-mean C(y))."""
    pos, neg = _levels(pos), _levels(neg)
    if len(pos) != len(neg):
        raise ValueError(f"logit level count mismatch: {len(pos)} vs {len(neg)}")
    terms = []
    for p, n in zip(pos, neg):
        g_pos = torch.sigmoid(p - n.mean(dim=0, keepdim=True))
        g_neg = torch.sigmoid(n - p.mean(dim=0, keepdim=True))
        terms.append(
            -torch.log(g_pos.clamp_min(LOG_EPS)).mean() - torch.log((1 - g_neg).clamp_min(LOG_EPS)).mean()
        )
    return torch.stack(terms).mean()


def ragan_generator_loss(fake_logits, real_logits):
    return _relativistic(fake_logits, real_logits)


def ragan_discriminator_loss(fake_logits, real_logits):
    return _relativistic(real_logits, fake_logits)


def approx_r1_loss(discriminator, x_real, sigma: float, seed: int, real_logits=None):
    """Squared change of every logit map under additive N(0, sigma^2) input noise.

    The noised image is deliberately not clamped to the valid pixel range.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    gen = torch_generator(seed, 0x51)
    noise = torch.randn(x_real.shape, generator=gen, dtype=x_real.dtype)
    clean = _levels(real_logits if real_logits is not None else discriminator(x_real))
    noisy = _levels(discriminator(x_real + sigma * noise))
    return torch.stack([((a - b) ** 2).mean() for a, b in zip(clean, noisy)]).mean()


# ---------------------------------------------------------------------------
# frequency distribution loss


@dataclass
class SpectralDecomposition:
    amplitude: torch.Tensor
    phase: torch.Tensor

    def reconstruct(self) -> torch.Tensor:
        return torch.fft.ifft2(torch.polar(self.amplitude, self.phase)).real


def dft_decompose(feature) -> SpectralDecomposition:
    """Unnormalised 2D DFT over the last two axes; phase in (-pi, pi]."""
    spec = torch.fft.fft2(feature)
    return SpectralDecomposition(spec.abs(), spec.angle())


@dataclass
class ProjectionSet:
    directions: torch.Tensor  # (n_proj, dim), unit rows
    seed: int

    @classmethod
    def draw(cls, dim: int, n_proj: int, seed: int, dtype=torch.float64) -> "ProjectionSet":
        if n_proj < 1:
            raise ValueError("n_proj must be >= 1")
        d = torch.randn(n_proj, dim, generator=torch_generator(seed, 0x5D), dtype=dtype)
        return cls(d / d.norm(dim=1, keepdim=True), seed)


def sliced_wasserstein(points_a, points_b, proj: ProjectionSet):
    """SW-1 between equal-size point clouds ``(..., n, d)``.

    Each slice is solved exactly by sorted pairing; leading batch axes are
    averaged together with the slices.
    """
    if points_a.shape != points_b.shape:
        raise ValueError(
            f"point sets must share cardinality and dimension: {tuple(points_a.shape)} vs {tuple(points_b.shape)}"
        )
    dirs = proj.directions.to(points_a.dtype)
    if dirs.shape[0] == 0:
        raise ValueError("projection set is empty")
    if dirs.shape[1] != points_a.shape[-1]:
        raise ValueError(f"projection dim {dirs.shape[1]} != point dim {points_a.shape[-1]}")
    pa = torch.sort(points_a @ dirs.T, dim=-2).values
    pb = torch.sort(points_b @ dirs.T, dim=-2).values
    return (pa - pb).abs().mean()


def patch_spectra(feature, patch_size: int):
    """``(B, C, H, W)`` -> per-patch amplitude/phase point sets ``(B, n_patches, C*p*p)``."""
    b, c, h, w = feature.shape
    p = min(patch_size, h, w)
    nh, nw = h // p, w // p
    f = feature[..., : nh * p, : nw * p].reshape(b, c, nh, p, nw, p).permute(0, 2, 4, 1, 3, 5)
    dec = dft_decompose(f)
    return dec.amplitude.reshape(b, nh * nw, -1), dec.phase.reshape(b, nh * nw, -1)


def fdl_from_features(feats_hr, feats_pred, proj_seed: int, weights: LossWeights, patch_size: int = 8,
                      n_proj: int = 32, return_terms: bool = False):
    amp_terms, phase_terms = [], []
    for level, (fh, fp) in enumerate(zip(feats_hr, feats_pred)):
        _same_shape(fh, fp)
        amp_h, ph_h = patch_spectra(fh, patch_size)
        amp_p, ph_p = patch_spectra(fp, patch_size)
        dim = amp_h.shape[-1]
        # amplitude and phase points share one set of directions per level
        proj = ProjectionSet.draw(dim, n_proj, derive_seed(proj_seed, level), fh.dtype)
        amp_terms.append(sliced_wasserstein(amp_h, amp_p, proj))
        phase_terms.append(sliced_wasserstein(ph_h, ph_p, proj))
    amp = torch.stack(amp_terms).mean()
    phase = torch.stack(phase_terms).mean()
    total = amp + weights.lambda_phase * phase
    if return_terms:
        return total, amp, phase
    return total


def fdl_loss(x_hr, x_pred, proj_seed: int, weights: LossWeights = LossWeights(), patch_size: int = 8,
             n_proj: int = 32, feature_fn=None, return_terms: bool = False):
    """Sliced-Wasserstein distance between patchwise DFT amplitude and phase
    distributions of extractor features; projections are redrawn from ``proj_seed``."""
    _same_shape(x_hr, x_pred)
    phi = feature_fn or feature_extract
    return fdl_from_features(phi(x_hr), phi(x_pred), proj_seed, weights, patch_size, n_proj, return_terms)


# ---------------------------------------------------------------------------
# combinations


def total_generator_loss(components: dict, weights: LossWeights, lambda3: float | None = None):
    """Weighted generator objective. ``lambda3`` overrides ``weights.lambda3``
    (stage schedule); a zero weight drops FDL from the sum but keeps it in the report."""
    lam3 = weights.lambda3 if lambda3 is None else lambda3
    total = components["l1"] + weights.lambda1 * components["perceptual"] + weights.lambda2 * components["ragan_g"]
    if lam3 != 0:
        total = total + lam3 * components["fdl"]
    report = LossReport(
        l1=_scalar(components["l1"]),
        perceptual=_scalar(components["perceptual"]),
        ragan_g=_scalar(components["ragan_g"]),
        fdl=_scalar(components["fdl"]),
        total_g=_scalar(total),
    )
    return total, report


def total_discriminator_loss(ragan_d, r1, weights: LossWeights):
    return ragan_d + weights.lambda_r1 * r1
