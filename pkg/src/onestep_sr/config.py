"""Flat ``section.key = value`` run configuration.

A config file holds one assignment per line; ``#`` starts a comment and
blank lines are ignored. Keys are dotted ``section.field`` names covering
every field of the dataclasses listed in ``SECTIONS``. Unknown keys are an
error, never silently dropped. Tuples are written comma-separated, optional
integers accept ``none``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .degrade import FAMILIES, DegradationConfig
from .flowcore import MismatchExperimentConfig
from .losses import LossWeights
from .nets import DiscriminatorConfig, GeneratorConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Bad key, unparsable value, or a value rejected by validation."""


@dataclass(frozen=True)
class CodecConfig:
    f: int = 2


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 64
    n_eval: int = 32
    hr_size: int = 64
    families: tuple[str, ...] = FAMILIES
    eval_offset: int = 100_000  # held-out samples start at this index

    def __post_init__(self):
        if self.n_train < 1 or self.n_eval < 1:
            raise ValueError("n_train and n_eval must be >= 1")
        unknown = set(self.families) - set(FAMILIES)
        if unknown or not self.families:
            raise ValueError(f"families must be a non-empty subset of {FAMILIES}")
        if self.eval_offset < self.n_train:
            raise ValueError("eval_offset must be >= n_train so the eval set is held out")


# section name -> (RunConfig attribute, dataclass, excluded fields)
SECTIONS = {
    "train": ("train", TrainConfig, ("weights",)),
    "weights": ("weights", LossWeights, ()),
    "degradation": ("degradation", DegradationConfig, ()),
    "generator": ("generator", GeneratorConfig, ()),
    "discriminator": ("discriminator", DiscriminatorConfig, ()),
    "codec": ("codec", CodecConfig, ()),
    "data": ("data", DataConfig, ()),
    "mismatch": ("mismatch", MismatchExperimentConfig, ()),
}


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    data: DataConfig = field(default_factory=DataConfig)
    mismatch: MismatchExperimentConfig = field(default_factory=MismatchExperimentConfig)

    @property
    def weights(self) -> LossWeights:
        return self.train.weights

    @property
    def codec_f(self) -> int:
        return self.codec.f

    def to_flat(self) -> dict:
        """JSON-compatible ``{dotted key: value}`` echo (tuples become lists)."""
        out = {}
        for section, (_, cls, skip) in SECTIONS.items():
            obj = self.weights if section == "weights" else getattr(self, section)
            for f in dataclasses.fields(cls):
                if f.name in skip:
                    continue
                v = getattr(obj, f.name)
                out[f"{section}.{f.name}"] = list(v) if isinstance(v, tuple) else v
        return out


def _fields(section: str):
    _, cls, skip = SECTIONS[section]
    return {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}


def all_keys() -> list[str]:
    return [f"{s}.{name}" for s in SECTIONS for name in _fields(s)]


def parse_value(text: str, annotation: str):
    text = text.strip()
    ann = annotation.replace(" ", "")
    if ann.endswith("|None"):
        if text.lower() == "none":
            return None
        ann = ann[: -len("|None")]
    if ann.startswith("tuple["):
        inner = ann[len("tuple["):-1].split(",")[0]
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        return tuple(parse_value(p, inner) for p in parts)
    if ann == "int":
        return int(text)
    if ann == "float":
        return float(text)
    if ann == "bool":
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if ann == "str":
        return text
    raise ValueError(f"unsupported field type {annotation}")


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def defaults() -> dict[str, str]:
    """Every config key mapped to the formatted default value."""
    return {k: format_value(v) for k, v in RunConfig().to_flat().items()}


def parse_assignments(lines, source: str = "<overrides>") -> dict[str, str]:
    out = {}
    known = set(all_keys())
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = value
    return out


def build(assignments: dict[str, str]) -> RunConfig:
    """Apply textual assignments on top of the defaults and validate."""
    per_section: dict[str, dict] = {s: {} for s in SECTIONS}
    for key, text in assignments.items():
        section, _, name = key.partition(".")
        if section not in SECTIONS or name not in _fields(section):
            raise ConfigError(f"unknown config key {key!r}")
        try:
            per_section[section][name] = parse_value(text, _fields(section)[name].type)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    try:
        weights = LossWeights(**per_section["weights"])
        parts = {"train": TrainConfig(weights=weights, **per_section["train"])}
        for section, (attr, cls, _) in SECTIONS.items():
            if section not in ("train", "weights"):
                parts[attr] = cls(**per_section[section])
        cfg = RunConfig(**parts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.generator.latent_channels != 3 * cfg.codec.f**2:
        raise ConfigError("generator.latent_channels must equal 3 * codec.f**2")
    if cfg.data.hr_size % cfg.degradation.scale or cfg.data.hr_size % (cfg.codec.f * cfg.generator.patch_size):
        raise ConfigError("data.hr_size must be divisible by degradation.scale and codec.f * generator.patch_size")
    return cfg


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults <- file (if given) <- ``key=value`` overrides, in that order."""
    assignments: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(str(path))
        assignments.update(parse_assignments(path.read_text().splitlines(), str(path)))
    assignments.update(parse_assignments(list(overrides)))
    return build(assignments)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in cfg.to_flat().items())
