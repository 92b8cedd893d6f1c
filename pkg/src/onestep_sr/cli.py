"""``onestep-sr`` command line.

Exit codes: 0 success, 2 configuration error, 3 missing file, 4 numerical
abort during training. Failures print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import spectral
from .config import ConfigError, RunConfig
from .degrade import degrade, export_dataset, make_toy_dataset
from .flowcore import run_mismatch_experiment
from .imageio import read_png, write_png
from .nets import CheckpointError, LatentCodec
from .trainer import NumericalAbort, evaluate, init_state, latest_checkpoint, restore_checkpoint, run_training

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERICAL = 4

SUBCOMMANDS = ("train", "eval", "degrade", "analyze-spectrum", "simulate-mismatch", "metrics")


def _epilog() -> str:
    lines = ["config keys (default values):"]
    lines += [f"  {k} = {v}" for k, v in config_mod.defaults().items()]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--output-dir", type=Path, default=Path("out"), help="all outputs go here (default: out)")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for data-parallel sections")
    common.add_argument("-v", "--verbose", action="store_true")

    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="onestep-sr", description="One-step super-resolution toolkit.",
                                     epilog=_epilog(), formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                              epilog=_epilog(), formatter_class=fmt)

    p = add("train", "train on the procedural toy dataset")
    p.add_argument("--no-resume", action="store_true", help="ignore existing checkpoints in the output dir")

    p = add("eval", "evaluate a checkpoint and the upsample baseline on the held-out set")
    p.add_argument("--checkpoint", type=Path, help="default: latest checkpoint under --output-dir")

    p = add("degrade", "degrade one HR PNG, or export a toy paired dataset with --toy")
    p.add_argument("image", nargs="?", type=Path)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--toy", type=int, metavar="N", help="export N procedural pairs instead")

    p = add("analyze-spectrum", "grid-artifact report and spectrum image for a PNG")
    p.add_argument("image", type=Path)
    p.add_argument("--period", type=int, help="default: generator.patch_size * codec.f")

    p = add("simulate-mismatch", "2D trajectory-mismatch experiment")
    p.add_argument("--severities", help="comma-separated list, overrides mismatch.severities")

    p = add("metrics", "PSNR and SSIM between two PNGs")
    p.add_argument("image_a", type=Path)
    p.add_argument("image_b", type=Path)
    return parser


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _finite_or_none(v: float):
    return v if math.isfinite(v) else None


def _datasets(cfg: RunConfig, jobs: int):
    d = cfg.data
    train = make_toy_dataset(d.n_train, d.hr_size, cfg.degradation, d.families, jobs=jobs)
    held_out = make_toy_dataset(d.n_eval, d.hr_size, cfg.degradation, d.families, offset=d.eval_offset, jobs=jobs)
    return train, held_out


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(cfg: RunConfig, args) -> dict:
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(config_mod.dump_config(cfg))
    train_set, eval_set = _datasets(cfg, args.jobs)
    state, metrics = run_training(cfg, train_set, out, eval_set=eval_set, resume=not args.no_resume)
    return {"step": state.step, "metrics": str(metrics), "checkpoint": str(latest_checkpoint(out))}


def cmd_eval(cfg: RunConfig, args) -> dict:
    ckpt = args.checkpoint or latest_checkpoint(args.output_dir)
    if ckpt is None:
        raise FileNotFoundError(f"no checkpoint under {args.output_dir / 'checkpoints'}")
    state = init_state(cfg.train, cfg.generator, cfg.discriminator, LatentCodec(cfg.codec.f), cfg.degradation.scale)
    restore_checkpoint(state, ckpt, cfg.to_flat())
    _, eval_set = _datasets(cfg, args.jobs)
    model = evaluate(state, eval_set, fdl_seed=cfg.train.seed)
    base = evaluate(state, eval_set, baseline=True, fdl_seed=cfg.train.seed)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    (args.output_dir / "eval.csv").write_text(model.to_csv())
    try:
        ckpt_name = Path(ckpt).resolve().relative_to(args.output_dir.resolve()).as_posix()
    except ValueError:
        ckpt_name = str(ckpt)
    summary = {"checkpoint": ckpt_name, "step": state.step, "model": model.means, "baseline": base.means}
    _write_json(args.output_dir / "eval.json", summary)
    return summary


def cmd_degrade(cfg: RunConfig, args) -> dict:
    out = args.output_dir
    if args.toy is not None:
        if args.toy < 1:
            raise ConfigError("--toy needs N >= 1")
        samples = make_toy_dataset(args.toy, cfg.data.hr_size, cfg.degradation, cfg.data.families, jobs=args.jobs)
        index = export_dataset(samples, out / "toy")
        return {"n": len(samples), "index": str(index)}
    if args.image is None:
        raise ConfigError("degrade needs an input PNG or --toy N")
    x_hr = read_png(args.image)
    try:
        x_lr = degrade(x_hr, cfg.degradation, args.sample_seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    path = out / f"{args.image.stem}_lr.png"
    write_png(path, x_lr)
    return {"input": str(args.image), "output": str(path), "shape": list(x_lr.shape)}


def cmd_analyze_spectrum(cfg: RunConfig, args) -> dict:
    img = read_png(args.image)
    period = args.period or cfg.generator.patch_size * cfg.codec.f
    try:
        report = spectral.grid_artifact_energy(img, period)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = args.output_dir
    write_png(out / f"{args.image.stem}_spectrum.png", np.repeat(spectral.spectrum_image(img), 3, axis=-1))
    _write_json(out / f"{args.image.stem}_artifact.json", report.to_dict())
    return report.to_dict()


def _plot_mismatch(path: Path, result) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sev = [r[0] for r in result.rows]
    fig, ax = plt.subplots(figsize=(4.5, 3.2), dpi=100)
    ax.plot(sev, [r[1] for r in result.rows], "o-", label="one step from degraded start")
    ax.plot(sev, [r[2] for r in result.rows], "s--", label="multi-step from noise")
    ax.set_xlabel("degradation severity")
    ax.set_ylabel("mean sq. distance to data")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def cmd_simulate_mismatch(cfg: RunConfig, args) -> dict:
    mcfg = cfg.mismatch
    if args.severities:
        try:
            sev = config_mod.parse_value(args.severities, "tuple[float, ...]")
            mcfg = dataclasses.replace(mcfg, severities=sev)
        except ValueError as exc:
            raise ConfigError(f"bad --severities: {exc}") from None
    result = run_mismatch_experiment(mcfg, jobs=args.jobs)
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "mismatch.csv").write_text(result.to_csv())
    _plot_mismatch(out / "mismatch.png", result)
    return {"rows": len(result.rows), "converged": result.converged, "csv": str(out / "mismatch.csv")}


def cmd_metrics(cfg: RunConfig, args) -> dict:
    a, b = read_png(args.image_a), read_png(args.image_b)
    if a.shape != b.shape:
        raise ConfigError(f"image shapes differ: {a.shape} vs {b.shape}")
    psnr = spectral.psnr(a, b)
    return {"psnr": _finite_or_none(psnr), "identical": math.isinf(psnr), "ssim": spectral.ssim(a, b)}


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "degrade": cmd_degrade,
    "analyze-spectrum": cmd_analyze_spectrum,
    "simulate-mismatch": cmd_simulate_mismatch,
    "metrics": cmd_metrics,
}


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def dispatch(args) -> int:
    try:
        cfg = config_mod.load_config(args.config, args.overrides)
        result = HANDLERS[args.command](cfg, args)
    except (ConfigError, CheckpointError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, "missing_file", str(exc))
    except NumericalAbort as exc:
        return _fail(EXIT_NUMERICAL, "numerical", str(exc))
    _emit(result)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
