"""Rectified-flow primitives and the trajectory-mismatch simulator.

The array helpers are written against the arithmetic protocol shared by
numpy arrays and torch tensors, so both can be passed in directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn


def _require_same_shape(**arrays) -> None:
    shapes = {name: tuple(a.shape) for name, a in arrays.items()}
    if len(set(shapes.values())) > 1:
        desc = ", ".join(f"{k}={v}" for k, v in shapes.items())
        raise ValueError(f"shape mismatch: {desc}")


def _require_unit_interval(t) -> None:
    if isinstance(t, torch.Tensor):
        lo, hi = float(t.min()), float(t.max())
    else:
        arr = np.asarray(t, dtype=float)
        lo, hi = float(arr.min()), float(arr.max())
    if not (0.0 <= lo and hi <= 1.0):
        raise ValueError(f"t must lie in [0, 1], got range [{lo}, {hi}]")


@dataclass(frozen=True)
class FlowState:
    """A latent ``z`` at flow time ``t``."""

    z: object
    t: float

    def __post_init__(self):
        _require_unit_interval(self.t)
        finite = torch.isfinite(self.z).all() if isinstance(self.z, torch.Tensor) else np.isfinite(self.z).all()
        if not bool(finite):
            raise ValueError("FlowState.z contains NaN or Inf")


def interpolate_state(z0, z1, t):
    """Point on the straight path from data ``z0`` (t=0) to noise ``z1`` (t=1)."""
    _require_same_shape(z0=z0, z1=z1)
    _require_unit_interval(t)
    return t * z1 + (1 - t) * z0


def target_velocity(z0, z1):
    _require_same_shape(z0=z0, z1=z1)
    return z1 - z0


def flow_matching_loss(predicted_v, z0, z1):
    """Mean squared error between a predicted field and ``z1 - z0``."""
    _require_same_shape(predicted_v=predicted_v, z0=z0, z1=z1)
    return ((predicted_v - (z1 - z0)) ** 2).mean()


def one_step_predict(z_t1, generator_output):
    """One Euler update to t=0.

    The generator is expected to emit the full displacement ``z_t1 - z0``;
    no step-size factor is applied here.
    """
    _require_same_shape(z_t1=z_t1, generator_output=generator_output)
    return z_t1 - generator_output


# ---------------------------------------------------------------------------
# trajectory-mismatch simulator


@dataclass(frozen=True)
class MismatchExperimentConfig:
    data_dim: int = 2
    severities: tuple[float, ...] = (0.0, 0.5, 1.0, 2.0)
    n_samples: int = 2000
    n_flow_steps: int = 50
    t1: float = 0.3
    seed: int = 0
    train_steps: int = 2000
    batch_size: int = 512
    lr: float = 2e-3
    hidden: int = 64
    # mixture geometry: two modes at +/- mode_offset along axis 0
    mode_offset: float = 2.0
    mode_std: float = 0.35
    # degradation: mean shift along axis 1 and isotropic spread, both x severity
    shift_per_severity: float = 1.0
    blur_per_severity: float = 0.5
    # converged iff final loss <= ratio * loss of the best constant predictor
    converge_ratio: float = 0.8

    def __post_init__(self):
        if self.data_dim < 1:
            raise ValueError("data_dim must be positive")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.n_flow_steps < 1:
            raise ValueError("n_flow_steps must be >= 1")
        if not 0.0 < self.t1 <= 1.0:
            raise ValueError("t1 must lie in (0, 1]")
        if any(s < 0 for s in self.severities):
            raise ValueError("severities must be >= 0")
        if len(self.severities) == 0:
            raise ValueError("at least one severity is required")


@dataclass
class MismatchResult:
    rows: list[tuple[float, float, float]]
    converged: bool
    final_loss: float
    baseline_loss: float
    columns: tuple[str, ...] = field(default=("severity", "one_step_error", "multi_step_error"))

    def to_csv(self) -> str:
        lines = [",".join(self.columns + ("converged",))]
        for sev, one, multi in self.rows:
            lines.append(f"{sev!r},{one!r},{multi!r},{int(self.converged)}")
        return "\n".join(lines) + "\n"


class _VelocityMLP(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim + 1, hidden),
            nn.SiLU(),
            nn.Linear(hidden, hidden),
            nn.SiLU(),
            nn.Linear(hidden, dim),
        )

    def forward(self, z, t):
        return self.net(torch.cat([z, t.expand(z.shape[0], 1)], dim=1))


def _sample_mixture(cfg: MismatchExperimentConfig, n: int, gen: torch.Generator) -> torch.Tensor:
    comp = torch.randint(0, 2, (n,), generator=gen, dtype=torch.int64)
    centers = torch.zeros(n, cfg.data_dim, dtype=torch.float64)
    centers[:, 0] = (2 * comp - 1).to(torch.float64) * cfg.mode_offset
    return centers + cfg.mode_std * torch.randn(n, cfg.data_dim, generator=gen, dtype=torch.float64)


def _degrade_points(cfg: MismatchExperimentConfig, x0, severity: float, gen: torch.Generator):
    shift = torch.zeros(cfg.data_dim, dtype=x0.dtype)
    shift[1 % cfg.data_dim] = cfg.shift_per_severity * severity
    spread = cfg.blur_per_severity * severity
    return x0 + shift + spread * torch.randn(x0.shape, generator=gen, dtype=x0.dtype)


def _nearest_sq_dist(points, reference) -> float:
    return float(torch.cdist(points, reference).min(dim=1).values.pow(2).mean())


def _stream(seed: int, tag: int) -> torch.Generator:
    state = np.random.SeedSequence([seed, tag]).generate_state(2, dtype=np.uint64)
    return torch.Generator().manual_seed(int(state[0] >> np.uint64(1)))


def train_velocity_field(cfg: MismatchExperimentConfig):
    """Fit the noise-to-data velocity regressor; returns (model, final_loss, baseline_loss)."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = _VelocityMLP(cfg.data_dim, cfg.hidden).double()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    gen = _stream(cfg.seed, 1)
    recent: list[float] = []
    for _ in range(cfg.train_steps):
        x0 = _sample_mixture(cfg, cfg.batch_size, gen)
        z1 = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
        t = torch.rand(cfg.batch_size, 1, generator=gen, dtype=x0.dtype)
        zt = interpolate_state(x0, z1, t)
        loss = flow_matching_loss(model(zt, t), x0, z1)
        opt.zero_grad()
        loss.backward()
        opt.step()
        recent.append(loss.item())
        if len(recent) > 100:
            recent.pop(0)
    final_loss = sum(recent) / max(len(recent), 1)

    eval_gen = _stream(cfg.seed, 2)
    x0 = _sample_mixture(cfg, 4096, eval_gen)
    z1 = torch.randn(x0.shape, generator=eval_gen, dtype=x0.dtype)
    target = z1 - x0
    baseline_loss = float(((target - target.mean(dim=0)) ** 2).mean())
    return model, final_loss, baseline_loss


@torch.no_grad()
def euler_sample(model, z_start, t_start: float, n_steps: int):
    """Integrate dz/dt = v(z, t) from ``t_start`` down to 0 with uniform steps."""
    z = z_start.clone()
    dt = t_start / n_steps
    for k in range(n_steps):
        t = torch.full((1, 1), t_start - k * dt, dtype=z.dtype)
        z = z - dt * model(z, t)
    return z


def run_mismatch_experiment(cfg: MismatchExperimentConfig, jobs: int = 1) -> MismatchResult:
    """Compare multi-step sampling from noise against one-step restoration
    from degraded starting points at ``t1``, over a sweep of severities.

    Errors are the mean squared distance from each generated point to its
    nearest sample in an independent reference draw of the data.
    """
    model, final_loss, baseline_loss = train_velocity_field(cfg)
    model.eval()

    reference = _sample_mixture(cfg, cfg.n_samples, _stream(cfg.seed, 3))
    noise = torch.randn(cfg.n_samples, cfg.data_dim, generator=_stream(cfg.seed, 4), dtype=torch.float64)
    multi = _nearest_sq_dist(euler_sample(model, noise, 1.0, cfg.n_flow_steps), reference)

    def one_severity(idx_sev):
        idx, sev = idx_sev
        gen = _stream(cfg.seed, 100 + idx)
        x0 = _sample_mixture(cfg, cfg.n_samples, gen)
        z1 = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
        x_deg = _degrade_points(cfg, x0, sev, gen)
        z_t1 = interpolate_state(x_deg, z1, cfg.t1)
        with torch.no_grad():
            t = torch.full((1, 1), cfg.t1, dtype=x0.dtype)
            z_hat = one_step_predict(z_t1, cfg.t1 * model(z_t1, t))
        return (float(sev), _nearest_sq_dist(z_hat, reference), multi)

    items = list(enumerate(cfg.severities))
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one_severity, items))
    else:
        rows = [one_severity(it) for it in items]

    converged = math.isfinite(final_loss) and final_loss <= cfg.converge_ratio * baseline_loss
    return MismatchResult(rows=rows, converged=converged, final_loss=final_loss, baseline_loss=baseline_loss)
