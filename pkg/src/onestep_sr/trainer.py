"""Alternating generator/discriminator training over the two-stage schedule."""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import spectral
from .flowcore import one_step_predict
from .imageio import write_png
from .losses import (
    LossReport,
    LossWeights,
    approx_r1_loss,
    fdl_from_features,
    l1_loss,
    perceptual_from_features,
    ragan_discriminator_loss,
    ragan_generator_loss,
    total_discriminator_loss,
    total_generator_loss,
)
from .nets import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    LatentCodec,
    decode_latent,
    encode_latent,
    feature_extract,
    load_checkpoint,
    patchify,
    save_checkpoint,
    semantic_encode,
    unpatchify,
)
from .seeding import derive_seed

log = logging.getLogger(__name__)

EVAL_COLUMNS = ["psnr", "ssim", "eval_perceptual", "eval_fdl", "artifact_ratio"]
CSV_COLUMNS = ["kind"] + LossReport.columns() + EVAL_COLUMNS


class NumericalAbort(RuntimeError):
    """A loss went non-finite; parameters were restored to their pre-step values."""

    def __init__(self, message: str, report: LossReport):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 3000
    stage1_steps: int = 2000
    batch_size: int = 4
    lr_generator: float = 1e-4
    lr_discriminator: float = 2e-5
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    eval_every: int = 500
    checkpoint_every: int = 500
    weight_decay: float = 0.01
    t1: float = 0.25
    fdl_patch_size: int = 8
    n_proj: int = 32

    def __post_init__(self):
        if not 0 <= self.stage1_steps <= self.total_steps:
            raise ValueError("need 0 <= stage1_steps <= total_steps")
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ValueError("learning rates must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.t1 <= 1.0:
            raise ValueError("t1 must lie in [0, 1]")


def stage_at(step: int, cfg: TrainConfig) -> int:
    return 1 if step < cfg.stage1_steps else 2


def lambda3_at(step: int, cfg: TrainConfig) -> float:
    return 0.0 if stage_at(step, cfg) == 1 else cfg.weights.lambda3


@dataclass
class TrainState:
    step: int
    cfg: TrainConfig
    codec: LatentCodec
    scale: int
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer

    @property
    def stage(self) -> int:
        return stage_at(self.step, self.cfg)

    @property
    def artifact_period(self) -> int:
        return self.generator.cfg.patch_size * self.codec.f


def init_state(cfg: TrainConfig, gen_cfg: GeneratorConfig = GeneratorConfig(),
               disc_cfg: DiscriminatorConfig = DiscriminatorConfig(),
               codec: LatentCodec = LatentCodec(), scale: int = 4) -> TrainState:
    if gen_cfg.latent_channels != 3 * codec.f**2:
        raise ValueError(f"generator latent_channels={gen_cfg.latent_channels} does not match codec (3*f^2)")
    gen = Generator(gen_cfg)
    disc = Discriminator(disc_cfg)
    head_ids = {id(p) for p in gen.head_parameters()}
    opt_g = torch.optim.AdamW(
        [
            {"params": [p for p in gen.trainable_parameters() if id(p) not in head_ids], "weight_decay": 0.0},
            {"params": gen.head_parameters(), "weight_decay": cfg.weight_decay},
        ],
        lr=cfg.lr_generator,
        betas=(0.9, 0.999),
    )
    opt_d = torch.optim.AdamW(disc.head_parameters(), lr=cfg.lr_discriminator, betas=(0.9, 0.999),
                              weight_decay=cfg.weight_decay)
    return TrainState(0, cfg, codec, scale, gen, disc, opt_g, opt_d)


# ---------------------------------------------------------------------------
# forward pipeline


def upsample(x_lr: torch.Tensor, scale: int) -> torch.Tensor:
    x = F.interpolate(x_lr.movedim(-1, 1), scale_factor=scale, mode="bicubic", align_corners=False)
    return x.movedim(1, -1).clamp(0.0, 1.0)


def predict(state: TrainState, x_lr: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """LR batch -> (prediction, bicubic upsample used as the flow start)."""
    x_up = upsample(x_lr, state.scale)
    z_t1 = encode_latent(x_up, state.codec)
    grid = tuple(z_t1.shape[-3:-1])
    p = state.generator.cfg.patch_size
    tokens = patchify(z_t1, p)
    sem = semantic_encode(x_lr, state.generator)
    out = state.generator(tokens, sem, state.cfg.t1, (grid[0] // p, grid[1] // p))
    z0 = unpatchify(one_step_predict(tokens, out), p, grid)
    return decode_latent(z0, state.codec), x_up


def _stack(batch) -> tuple[torch.Tensor, torch.Tensor]:
    if not batch:
        raise ValueError("empty batch")
    x_hr = torch.from_numpy(np.stack([s.x_hr for s in batch])).float()
    x_lr = torch.from_numpy(np.stack([s.x_lr for s in batch])).float()
    return x_hr, x_lr


# ---------------------------------------------------------------------------
# one optimisation step


def _clone_optimizer_state(opt: torch.optim.Optimizer) -> dict:
    return {
        p: {k: v.clone() if torch.is_tensor(v) else v for k, v in slots.items()}
        for p, slots in opt.state.items()
    }


def _snapshot(state: TrainState):
    params = state.generator.trainable_parameters() + state.discriminator.head_parameters()
    return (
        [(p, p.detach().clone()) for p in params],
        _clone_optimizer_state(state.opt_g),
        _clone_optimizer_state(state.opt_d),
    )


def _restore(state: TrainState, snap) -> None:
    params, g_opt, d_opt = snap
    with torch.no_grad():
        for p, v in params:
            p.copy_(v)
    for opt, saved in ((state.opt_g, g_opt), (state.opt_d, d_opt)):
        opt.state.clear()
        opt.state.update(saved)


def _set_disc_trainable(disc: Discriminator, flag: bool) -> None:
    for p in disc.head_parameters():
        p.requires_grad_(flag)


def generator_step(state: TrainState, x_hr, x_lr, report: LossReport) -> None:
    cfg, w = state.cfg, state.cfg.weights
    lam3 = lambda3_at(state.step, cfg)
    disc = state.discriminator
    _set_disc_trainable(disc, False)
    try:
        x_pred, _ = predict(state, x_lr)
        with torch.no_grad():
            feats_hr = feature_extract(x_hr)
            real_logits = disc(x_hr)
        feats_pred = feature_extract(x_pred)
        proj_seed = derive_seed(cfg.seed, state.step, 0xFD1)
        if lam3 > 0:
            fdl = fdl_from_features(feats_hr, feats_pred, proj_seed, w, cfg.fdl_patch_size, cfg.n_proj)
        else:
            with torch.no_grad():
                fdl = fdl_from_features(feats_hr, [f.detach() for f in feats_pred], proj_seed, w,
                                        cfg.fdl_patch_size, cfg.n_proj)
        components = {
            "l1": l1_loss(x_pred, x_hr),
            "perceptual": perceptual_from_features(feats_pred, feats_hr),
            "ragan_g": ragan_generator_loss(disc(x_pred), real_logits),
            "fdl": fdl,
        }
        total, part = total_generator_loss(components, w, lambda3=lam3)
        for k in ("l1", "perceptual", "ragan_g", "fdl", "total_g"):
            setattr(report, k, getattr(part, k))
        if not math.isfinite(report.total_g):
            raise NumericalAbort(f"non-finite generator loss at step {state.step}", report)
        state.opt_g.zero_grad(set_to_none=True)
        total.backward()
        state.opt_g.step()
    finally:
        _set_disc_trainable(disc, True)


def discriminator_step(state: TrainState, x_hr, x_lr, report: LossReport) -> None:
    cfg, w = state.cfg, state.cfg.weights
    disc = state.discriminator
    with torch.no_grad():
        x_fake, _ = predict(state, x_lr)
    real_logits = disc(x_hr)
    fake_logits = disc(x_fake)
    ragan_d = ragan_discriminator_loss(fake_logits, real_logits)
    r1 = approx_r1_loss(disc, x_hr, w.r1_sigma, derive_seed(cfg.seed, state.step, 0xD1), real_logits=real_logits)
    total = total_discriminator_loss(ragan_d, r1, w)
    report.ragan_d, report.r1, report.total_d = ragan_d.item(), r1.item(), total.item()
    if not math.isfinite(report.total_d):
        raise NumericalAbort(f"non-finite discriminator loss at step {state.step}", report)
    state.opt_d.zero_grad(set_to_none=True)
    total.backward()
    state.opt_d.step()


def train_step(state: TrainState, batch) -> tuple[TrainState, LossReport]:
    """Generator update, then discriminator update on refreshed detached fakes.

    On a non-finite loss every trainable parameter and optimizer moment is
    put back to its pre-step value and :class:`NumericalAbort` is raised.
    """
    x_hr, x_lr = _stack(batch)
    report = LossReport(step=state.step, stage=state.stage)
    snap = _snapshot(state)
    try:
        generator_step(state, x_hr, x_lr, report)
        discriminator_step(state, x_hr, x_lr, report)
    except NumericalAbort:
        _restore(state, snap)
        raise
    state.step += 1
    return state, report


def sample_batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, step, 0xBA7C))
    return rng.integers(0, n, size=batch_size)


def advance(state: TrainState, dataset, until_step: int, on_step=None) -> TrainState:
    """Run ``train_step`` on counter-sampled batches until ``state.step == until_step``."""
    cfg = state.cfg
    while state.step < until_step:
        idx = sample_batch_indices(len(dataset), cfg.batch_size, cfg.seed, state.step)
        _, report = train_step(state, [dataset[i] for i in idx])
        if on_step is not None:
            on_step(state, report)
    return state


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    rows: list[dict]
    means: dict

    def to_csv(self) -> str:
        lines = [",".join(["id"] + EVAL_COLUMNS)]
        for i, row in enumerate(self.rows):
            lines.append(",".join([str(i)] + [repr(row[c]) for c in EVAL_COLUMNS]))
        return "\n".join(lines) + "\n"


@torch.no_grad()
def evaluate(state: TrainState, dataset, baseline: bool = False, fdl_seed: int = 0,
             chunk: int = 8) -> EvalResult:
    """Mean restoration metrics over ``dataset``; parameters are not touched.

    ``baseline=True`` scores the bicubic upsample, i.e. the prediction of a
    generator whose output is identically zero.
    """
    if not dataset:
        raise ValueError("empty evaluation set")
    period = state.artifact_period
    cfg = state.cfg
    was_training = state.generator.training
    state.generator.eval()
    rows = []
    try:
        for start in range(0, len(dataset), chunk):
            x_hr, x_lr = _stack(dataset[start:start + chunk])
            x_pred, x_up = predict(state, x_lr)
            x_out = (x_up if baseline else x_pred).clamp(0.0, 1.0)
            for i in range(x_hr.shape[0]):
                hr, out = x_hr[i:i + 1], x_out[i:i + 1]
                f_hr, f_out = feature_extract(hr), feature_extract(out)
                rows.append({
                    "psnr": spectral.psnr(out[0], hr[0]),
                    "ssim": spectral.ssim(out[0], hr[0]),
                    "eval_perceptual": float(perceptual_from_features(f_out, f_hr)),
                    "eval_fdl": float(fdl_from_features(f_hr, f_out, fdl_seed, cfg.weights,
                                                        cfg.fdl_patch_size, cfg.n_proj)),
                    "artifact_ratio": spectral.grid_artifact_energy(out[0], period).ratio,
                })
    finally:
        state.generator.train(was_training)
    means = {c: float(np.mean([r[c] for r in rows])) for c in EVAL_COLUMNS}
    return EvalResult(rows, means)


def save_triptych(path, state: TrainState, sample) -> None:
    with torch.no_grad():
        x_hr, x_lr = _stack([sample])
        x_pred, _ = predict(state, x_lr)
    lr_big = np.repeat(np.repeat(sample.x_lr, state.scale, axis=0), state.scale, axis=1)
    write_png(path, np.concatenate([lr_big, x_pred[0].clamp(0, 1).numpy(), sample.x_hr], axis=1))


# ---------------------------------------------------------------------------
# checkpoints and the training loop


def state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    """Copies of every parameter, buffer and optimizer slot, keyed by role."""
    arrays = {}
    for prefix, module in (("generator", state.generator), ("discriminator", state.discriminator)):
        for name, t in module.state_dict().items():
            arrays[f"{prefix}/{name}"] = t.detach().numpy().copy()
    for prefix, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        for idx, slots in opt.state_dict()["state"].items():
            for key, t in slots.items():
                arrays[f"{prefix}/{idx}/{key}"] = torch.as_tensor(t).detach().numpy().copy()
    return arrays


def load_state_arrays(state: TrainState, arrays: dict[str, np.ndarray], step: int) -> None:
    for prefix, module in (("generator", state.generator), ("discriminator", state.discriminator)):
        sd = {
            name[len(prefix) + 1:]: torch.from_numpy(np.array(a))
            for name, a in arrays.items() if name.startswith(prefix + "/")
        }
        module.load_state_dict(sd)
    for prefix, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        sd = opt.state_dict()
        slots: dict[int, dict] = {}
        for name, a in arrays.items():
            if name.startswith(prefix + "/"):
                _, idx, key = name.split("/")
                slots.setdefault(int(idx), {})[key] = torch.from_numpy(np.array(a))
        sd["state"] = slots
        opt.load_state_dict(sd)
    state.step = step


_CKPT_RE = re.compile(r"ckpt_(\d+)\.zip$")


def latest_checkpoint(out_dir) -> Path | None:
    ckpts = sorted(
        (int(m.group(1)), p) for p in (Path(out_dir) / "checkpoints").glob("ckpt_*.zip")
        if (m := _CKPT_RE.search(p.name))
    )
    return ckpts[-1][1] if ckpts else None


def write_checkpoint(state: TrainState, out_dir, config_echo: dict) -> Path:
    path = Path(out_dir) / "checkpoints" / f"ckpt_{state.step:07d}.zip"
    return save_checkpoint(path, state_arrays(state), step=state.step, stage=state.stage, config=config_echo)


def restore_checkpoint(state: TrainState, path, config_echo: dict | None = None) -> TrainState:
    arrays, manifest = load_checkpoint(path, expected_config=config_echo)
    load_state_arrays(state, arrays, manifest["step"])
    return state


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _truncate_metrics(path: Path, step: int) -> None:
    if not path.exists():
        return
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    keep = [
        r for r in rows
        if (r["kind"] == "train" and int(r["step"]) < step) or (r["kind"] == "eval" and int(r["step"]) <= step)
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(keep)


def run_training(run_cfg, dataset, out_dir, eval_set=None, resume: bool = True,
                 stop_after: int | None = None) -> tuple[TrainState, Path]:
    """Train for ``run_cfg.train.total_steps`` steps, writing ``metrics.csv``,
    checkpoints and sample triptychs under ``out_dir``.

    With ``resume`` the latest checkpoint in ``out_dir`` is picked up and the
    run continues bitwise-identically. ``stop_after`` halts after that many
    completed steps (used to simulate an interrupted job).
    """
    cfg: TrainConfig = run_cfg.train
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = run_cfg.to_flat()
    state = init_state(cfg, run_cfg.generator, run_cfg.discriminator, LatentCodec(run_cfg.codec_f),
                       run_cfg.degradation.scale)
    metrics_path = out_dir / "metrics.csv"

    ckpt = latest_checkpoint(out_dir) if resume else None
    if ckpt is not None:
        restore_checkpoint(state, ckpt, echo)
        _truncate_metrics(metrics_path, state.step)
        log.info("resumed from %s at step %d", ckpt, state.step)
    else:
        with open(metrics_path, "w", newline="") as fh:
            csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n").writeheader()
        write_checkpoint(state, out_dir, echo)

    def append(row: dict) -> None:
        with open(metrics_path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
            writer.writerow({k: _fmt(row.get(k, "")) for k in CSV_COLUMNS})

    def on_step(state: TrainState, report: LossReport) -> None:
        append({"kind": "train", **report.as_dict()})
        if eval_set and cfg.eval_every > 0 and state.step % cfg.eval_every == 0:
            res = evaluate(state, eval_set, fdl_seed=cfg.seed)
            append({"kind": "eval", "step": state.step, "stage": state.stage, **res.means})
            save_triptych(out_dir / "samples" / f"step_{state.step:07d}.png", state, eval_set[0])
        if (cfg.checkpoint_every > 0 and state.step % cfg.checkpoint_every == 0) or state.step == cfg.total_steps:
            write_checkpoint(state, out_dir, echo)
        if state.step % 100 == 0:
            log.info("step %d l1=%.4f total_g=%.4f total_d=%.4f", state.step, report.l1, report.total_g,
                     report.total_d)

    until = cfg.total_steps if stop_after is None else min(cfg.total_steps, max(stop_after, state.step))
    advance(state, dataset, until, on_step)
    return state, metrics_path
