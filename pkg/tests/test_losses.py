from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from onestep_sr.degrade import sample_rng, procedural_image
from onestep_sr.losses import (
    LossReport,
    LossWeights,
    ProjectionSet,
    approx_r1_loss,
    dft_decompose,
    fdl_loss,
    l1_loss,
    patch_spectra,
    perceptual_loss,
    ragan_discriminator_loss,
    ragan_generator_loss,
    sliced_wasserstein,
    total_discriminator_loss,
    total_generator_loss,
)
from onestep_sr.nets import Discriminator

from .helpers import FD_RTOL, gradient_rel_error, naive_dft2, sliced_oracle

from pathlib import Path

DATA = Path(__file__).parent / "data"
F64 = torch.float64


def rand(*shape, seed=0):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed), dtype=F64)


def randn(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=F64)


def identity_features(x):
    return [x.movedim(-1, 1) if x.dim() == 4 else x.movedim(-1, 0)[None]]


# ---------------------------------------------------------------------------
# weights and report


def test_loss_weights_defaults_and_validation():
    w = LossWeights()
    assert (w.lambda1, w.lambda2, w.lambda3, w.lambda_r1, w.lambda_phase) == (3.0, 0.1, 0.002, 10.0, 1.0)
    with pytest.raises(ValueError):
        LossWeights(lambda1=-1.0)
    with pytest.raises(ValueError):
        LossWeights(r1_sigma=0.0)


def test_loss_report_columns():
    assert LossReport.columns() == [
        "step", "stage", "l1", "perceptual", "ragan_g", "fdl", "total_g", "ragan_d", "r1", "total_d"
    ]


# ---------------------------------------------------------------------------
# L1 and perceptual


def test_l1_values():
    x = rand(2, 4, 4, 3)
    assert float(l1_loss(x, x)) == 0.0
    assert float(l1_loss(x + 0.1, x)) == pytest.approx(0.1, abs=1e-12)
    y = rand(2, 4, 4, 3, seed=1)
    acc = 0.0
    for v in (x - y).flatten().tolist():
        acc += abs(v)
    assert float(l1_loss(x, y)) == pytest.approx(acc / x.numel(), rel=1e-12)
    with pytest.raises(ValueError):
        l1_loss(x, y[..., :2])


def test_perceptual_values():
    x, y = rand(1, 16, 16, 3), rand(1, 16, 16, 3, seed=1)
    assert float(perceptual_loss(x, x)) == 0.0
    assert float(perceptual_loss(x, y)) == pytest.approx(float(perceptual_loss(y, x)), rel=1e-12)
    with pytest.raises(ValueError):
        perceptual_loss(x, y[:, :8])


def test_perceptual_golden():
    from .data.regen_golden import perceptual_pair

    a, b = perceptual_pair()
    golden = float((DATA / "perceptual_golden.txt").read_text())
    assert float(perceptual_loss(a, b)) == pytest.approx(golden, rel=1e-6)


# ---------------------------------------------------------------------------
# RaGAN


def _levels(*vals):
    return [torch.tensor(v, dtype=F64) for v in vals]


def test_ragan_symmetric_point():
    fake, real = [torch.zeros(3, 2, 2, dtype=F64)], [torch.zeros(3, 2, 2, dtype=F64)]
    assert float(ragan_generator_loss(fake, real)) == pytest.approx(2 * math.log(2), abs=1e-9)
    assert float(ragan_discriminator_loss(fake, real)) == pytest.approx(2 * math.log(2), abs=1e-9)


def test_ragan_scalar_cases():
    fake, real = _levels([0.5]), _levels([-0.5])
    assert float(ragan_generator_loss(fake, real)) == pytest.approx(0.62652, abs=1e-5)
    assert float(ragan_discriminator_loss(fake, real)) == pytest.approx(2.62652, abs=1e-5)


def test_ragan_saturation_limits():
    big = 1e4
    assert float(ragan_generator_loss(_levels([big]), _levels([-big]))) == pytest.approx(0.0, abs=1e-9)
    assert float(ragan_discriminator_loss(_levels([-big]), _levels([big]))) == pytest.approx(0.0, abs=1e-9)
    # the 1e-12 clamp keeps the losing side finite
    assert math.isfinite(float(ragan_generator_loss(_levels([-big]), _levels([big]))))


def test_ragan_rejects_empty_and_mismatched():
    with pytest.raises(ValueError):
        ragan_generator_loss([], [])
    with pytest.raises(ValueError):
        ragan_generator_loss(_levels([0.0], [0.0]), _levels([0.0]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-50, 50))
def test_ragan_shift_invariance(seed, c):
    fake, real = [randn(4, 3, 3, seed=seed), randn(4, 1)], [randn(4, 3, 3, seed=seed + 1), randn(4, 1, seed=3)]
    shifted_fake = [m + c for m in fake]
    shifted_real = [m + c for m in real]
    for fn in (ragan_generator_loss, ragan_discriminator_loss):
        assert float(fn(shifted_fake, shifted_real)) == pytest.approx(float(fn(fake, real)), rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------------------
# approximated R1


class LinearDisc:
    def __init__(self, w):
        self.w = w

    def __call__(self, x):
        return [(x * self.w).flatten(1).sum(dim=1)]


def test_r1_zero_cases():
    d = Discriminator().double()
    x = rand(2, 16, 16, 3)
    assert approx_r1_loss(d, x, 0.0, seed=1).item() == 0.0
    const = lambda x: [torch.ones(x.shape[0], 2, 2, dtype=F64)]  # noqa: E731
    assert float(approx_r1_loss(const, x, 0.5, seed=1)) == 0.0
    with pytest.raises(ValueError):
        approx_r1_loss(d, x, -1.0, seed=0)


def test_r1_linear_monte_carlo():
    w = randn(4, 4, 3, seed=5)
    sigma = 0.05
    x = rand(1, 4, 4, 3).expand(10_000, -1, -1, -1)
    est = float(approx_r1_loss(LinearDisc(w), x, sigma, seed=7))
    expected = sigma**2 * float((w**2).sum())
    assert abs(est - expected) / expected < 0.10


def test_r1_does_not_clamp_noised_input():
    seen = []

    def probe(x):
        seen.append(x.detach())
        return [x.flatten(1).sum(dim=1)]

    approx_r1_loss(probe, torch.ones(1, 4, 4, 3, dtype=F64), 0.5, seed=0)
    assert seen[-1].max() > 1.0


# ---------------------------------------------------------------------------
# DFT


def test_dft_constant():
    dec = dft_decompose(torch.full((4, 4), 0.7, dtype=F64))
    assert float(dec.amplitude[0, 0]) == pytest.approx(0.7 * 16)
    assert float(dec.amplitude.flatten()[1:].abs().max()) < 1e-12
    assert float(dec.phase[0, 0]) == 0.0


def test_dft_matches_naive_and_reconstructs():
    for seed in range(5):
        a = randn(4, 4, seed=seed)
        dec = dft_decompose(a)
        ref = naive_dft2(a.numpy())
        np.testing.assert_allclose(dec.amplitude.numpy(), np.abs(ref), atol=1e-9)
        np.testing.assert_allclose(np.exp(1j * dec.phase.numpy()) * np.abs(ref), ref, atol=1e-9)
        torch.testing.assert_close(dec.reconstruct(), a, atol=1e-6, rtol=0)
        assert dec.phase.min() > -math.pi - 1e-12 and dec.phase.max() <= math.pi + 1e-12


def test_dft_shift_theorem():
    a = randn(8, 8, seed=3)
    dy, dx = 2, 3
    base, moved = dft_decompose(a), dft_decompose(torch.roll(a, (dy, dx), (0, 1)))
    torch.testing.assert_close(moved.amplitude, base.amplitude, atol=1e-9, rtol=0)
    u = torch.arange(8, dtype=F64)[:, None]
    v = torch.arange(8, dtype=F64)[None, :]
    ramp = -2 * math.pi * (u * dy + v * dx) / 8
    diff = torch.angle(torch.exp(1j * (moved.phase - base.phase - ramp)))
    mask = base.amplitude > 1e-9
    assert float(diff[mask].abs().max()) < 1e-9


# ---------------------------------------------------------------------------
# sliced Wasserstein


def test_sw_basic_values():
    proj = ProjectionSet(torch.ones(1, 1, dtype=F64), 0)
    assert float(sliced_wasserstein(torch.zeros(2, 1, dtype=F64), torch.ones(2, 1, dtype=F64), proj)) == 1.0
    pts = randn(5, 3)
    p3 = ProjectionSet.draw(3, 8, seed=1, dtype=F64)
    assert float(sliced_wasserstein(pts, pts, p3)) == 0.0
    assert float(sliced_wasserstein(pts, pts[torch.randperm(5, generator=torch.Generator().manual_seed(0))], p3)) == 0.0


def test_sw_errors():
    p = ProjectionSet.draw(3, 4, seed=0, dtype=F64)
    with pytest.raises(ValueError):
        sliced_wasserstein(randn(4, 3), randn(5, 3), p)
    with pytest.raises(ValueError):
        sliced_wasserstein(randn(4, 2), randn(4, 2), p)
    with pytest.raises(ValueError):
        ProjectionSet.draw(3, 0, seed=0)
    with pytest.raises(ValueError):
        sliced_wasserstein(randn(4, 3), randn(4, 3), ProjectionSet(torch.zeros(0, 3, dtype=F64), 0))


def test_projection_directions_unit_norm():
    p = ProjectionSet.draw(17, 32, seed=4)
    torch.testing.assert_close(p.directions.norm(dim=1), torch.ones(32, dtype=F64), atol=1e-6, rtol=0)


def test_sw_matches_assignment_oracle_small():
    a, b = randn(4, 2, seed=1), randn(4, 2, seed=2)
    proj = ProjectionSet.draw(2, 8, seed=3, dtype=F64)
    expected = sliced_oracle(a.numpy(), b.numpy(), proj.directions.numpy())
    assert float(sliced_wasserstein(a, b, proj)) == pytest.approx(expected, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 8), d=st.integers(1, 4))
def test_sw_symmetry_permutation_translation(seed, n, d):
    a, b = randn(n, d, seed=seed), randn(n, d, seed=seed + 1)
    proj = ProjectionSet.draw(d, 6, seed=seed, dtype=F64)
    base = float(sliced_wasserstein(a, b, proj))
    assert base >= 0.0
    assert float(sliced_wasserstein(b, a, proj)) == pytest.approx(base, abs=1e-12)
    perm = torch.randperm(n, generator=torch.Generator().manual_seed(seed))
    assert float(sliced_wasserstein(a[perm], b[perm], proj)) == pytest.approx(base, abs=1e-12)
    shift = randn(d, seed=seed + 2)
    assert float(sliced_wasserstein(a + shift, b + shift, proj)) == pytest.approx(base, abs=1e-9)


# ---------------------------------------------------------------------------
# FDL


def texture(seed, size=32):
    return torch.from_numpy(procedural_image(size, "sinusoid", sample_rng(99, seed)))[None]


def test_fdl_zero_on_identical():
    x = texture(0)
    assert float(fdl_loss(x, x, proj_seed=0)) == 0.0


def test_fdl_patch_spectra_shapes():
    amp, phase = patch_spectra(randn(2, 3, 16, 16), 8)
    assert amp.shape == phase.shape == (2, 4, 3 * 64)
    amp, _ = patch_spectra(randn(1, 2, 4, 4), 8)  # patch size clipped to the map
    assert amp.shape == (1, 1, 32)


def _patch_roll(x, p, dy, dx):
    b, h, w, c = x.shape
    blocks = x.reshape(b, h // p, p, w // p, p, c)
    blocks = torch.roll(blocks, shifts=(dy, dx), dims=(2, 4))
    return blocks.reshape(b, h, w, c)


def test_fdl_patch_shift_moves_only_phase():
    x = texture(1).double()
    shifted = _patch_roll(x, 8, 3, 5)
    total, amp, phase = fdl_loss(x, shifted, 0, feature_fn=identity_features, return_terms=True)
    assert float(phase) > 0.0
    assert float(amp) < 1e-6 * float(phase)


def test_fdl_amplitude_invariant_to_identical_patch_shifts():
    x, y = texture(2).double(), texture(3).double()
    _, amp, _ = fdl_loss(x, y, 0, feature_fn=identity_features, return_terms=True)
    _, amp_s, _ = fdl_loss(_patch_roll(x, 8, 2, 1), _patch_roll(y, 8, 2, 1), 0, feature_fn=identity_features,
                           return_terms=True)
    assert float(amp_s) == pytest.approx(float(amp), rel=1e-9)


def test_fdl_grid_pattern_increases_loss():
    yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    grid = torch.from_numpy(0.05 * (np.cos(np.pi * yy / 2) + np.cos(np.pi * xx / 2)))[None, ..., None]
    for i in range(20):
        x_hr = texture(100 + i)
        x_pred = torch.from_numpy(np.clip(x_hr.numpy() * 0.9 + 0.05, 0, 1))
        assert float(fdl_loss(x_hr, x_pred + grid, proj_seed=i)) > float(fdl_loss(x_hr, x_pred, proj_seed=i))


def test_fdl_projections_redrawn_per_seed():
    x, y = texture(4), texture(5)
    assert float(fdl_loss(x, y, 1)) == float(fdl_loss(x, y, 1))
    assert float(fdl_loss(x, y, 1)) != float(fdl_loss(x, y, 2))
    with pytest.raises(ValueError):
        fdl_loss(x, y[:, :16], 1)


# ---------------------------------------------------------------------------
# combinations


def test_total_generator_loss():
    zero = {k: torch.tensor(0.0) for k in ("l1", "perceptual", "ragan_g", "fdl")}
    total, _ = total_generator_loss(zero, LossWeights())
    assert float(total) == 0.0
    ones = {k: torch.tensor(1.0, dtype=F64) for k in zero}
    total, report = total_generator_loss(ones, LossWeights())
    assert float(total) == pytest.approx(4.102, abs=1e-12)
    total, report = total_generator_loss(ones, LossWeights(), lambda3=0.0)
    assert float(total) == pytest.approx(4.1, abs=1e-12)
    assert report.fdl == 1.0


def test_total_discriminator_loss():
    w = LossWeights()
    assert total_discriminator_loss(0.0, 0.0, w) == 0.0
    assert total_discriminator_loss(2 * math.log(2), 0.0, w) == pytest.approx(2 * math.log(2))
    assert total_discriminator_loss(1.0, 0.1, w) == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# gradients against central finite differences (float64, 4x4 inputs)


def gradient_cases():
    x_hr = rand(1, 4, 4, 3, seed=10)
    fake_other, real_other = [randn(2, 2, 2, seed=11), randn(2, 1, seed=12)], [randn(2, 2, 2, seed=13), randn(2, 1)]
    disc = Discriminator().double()
    w = LossWeights()

    def fdl_fn(x):
        return fdl_loss(x_hr, x, proj_seed=3, weights=w)

    return {
        "l1": (lambda x: l1_loss(x, x_hr), rand(1, 4, 4, 3, seed=1)),
        "perceptual": (lambda x: perceptual_loss(x, x_hr), rand(1, 4, 4, 3, seed=2)),
        "fdl": (fdl_fn, rand(1, 4, 4, 3, seed=3)),
        "fdl_identity_features": (
            lambda x: fdl_loss(x_hr, x, 3, w, patch_size=4, feature_fn=identity_features),
            rand(1, 4, 4, 3, seed=4),
        ),
        "ragan_g_fake": (lambda v: ragan_generator_loss([v, fake_other[1]], real_other), randn(2, 2, 2, seed=5)),
        "ragan_g_real": (lambda v: ragan_generator_loss(fake_other, [v, real_other[1]]), randn(2, 2, 2, seed=6)),
        "ragan_d_fake": (lambda v: ragan_discriminator_loss([v, fake_other[1]], real_other), randn(2, 2, 2, seed=7)),
        "ragan_d_real": (lambda v: ragan_discriminator_loss(fake_other, [v, real_other[1]]), randn(2, 2, 2, seed=8)),
        "r1_input": (lambda x: approx_r1_loss(disc, x, 0.1, seed=4), rand(1, 4, 4, 3, seed=9)),
        "total_g_via_l1_and_perceptual": (
            lambda x: total_generator_loss(
                {"l1": l1_loss(x, x_hr), "perceptual": perceptual_loss(x, x_hr),
                 "ragan_g": torch.tensor(0.0, dtype=F64), "fdl": fdl_fn(x)}, w)[0],
            rand(1, 4, 4, 3, seed=14),
        ),
    }


@pytest.mark.parametrize("name", list(gradient_cases()))
def test_gradients_match_finite_differences(name):
    fn, x = gradient_cases()[name]
    assert gradient_rel_error(fn, x) < FD_RTOL
