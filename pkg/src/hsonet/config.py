"""Configuration dataclasses and the YAML config file loader."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised when a configuration fails validation.

    ``problems`` lists every violation found, not just the first one.
    """

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


SCHEDULES = ("linear", "exponential", "cosine", "none")
LOSS_KINDS = ("bce", "focal", "eo")


@dataclass
class BackboneConfig:
    widths: tuple[int, int, int, int] = (16, 32, 64, 128)
    blocks: tuple[int, int, int, int] = (2, 2, 2, 2)
    pyramid_dim: int = 64
    decoder_dim: int = 64

    def problems(self) -> list[str]:
        out = []
        if len(self.widths) != 4:
            out.append(f"model.widths must have 4 entries, got {len(self.widths)}")
        if len(self.blocks) != 4:
            out.append(f"model.blocks must have 4 entries, got {len(self.blocks)}")
        if any(int(w) < 1 for w in self.widths):
            out.append(f"model.widths must be positive, got {list(self.widths)}")
        if any(int(b) < 1 for b in self.blocks):
            out.append(f"model.blocks must be positive, got {list(self.blocks)}")
        if self.pyramid_dim < 1:
            out.append(f"model.pyramid_dim must be >= 1, got {self.pyramid_dim}")
        if self.decoder_dim < 2:
            out.append(f"model.decoder_dim must be >= 2, got {self.decoder_dim}")
        return out


@dataclass
class EOLossConfig:
    kind: str = "eo"
    gamma: float = 2.0
    schedule: str = "cosine"
    step: int | None = None
    decay: float = 2.0
    eps: float = 1e-7
    literal_hardness: bool = False

    def problems(self) -> list[str]:
        out = []
        if self.kind not in LOSS_KINDS:
            out.append(f"loss.kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if not self.gamma >= 0:
            out.append(f"loss.gamma must be >= 0, got {self.gamma}")
        if self.schedule not in SCHEDULES:
            out.append(f"loss.schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.step is not None and self.step < 1:
            out.append(f"loss.step must be >= 1, got {self.step}")
        if not self.decay > 0:
            out.append(f"loss.decay must be > 0, got {self.decay}")
        if not 0 < self.eps <= 1e-3:
            out.append(f"loss.eps must lie in (0, 1e-3], got {self.eps}")
        return out


@dataclass
class SynthConfig:
    size: int = 256
    hard_case_rate: float = 0.3
    shadow_prob: float = 0.5
    seasonal_prob: float = 0.3
    change_frac: tuple[float, float] = (0.02, 0.20)
    noise_sigma: float = 0.01

    def problems(self) -> list[str]:
        out = []
        if self.size < 32 or self.size % 32:
            out.append(f"synth.size must be a positive multiple of 32, got {self.size}")
        for name in ("hard_case_rate", "shadow_prob", "seasonal_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                out.append(f"synth.{name} must lie in [0, 1], got {v}")
        lo, hi = self.change_frac
        if not 0.0 < lo < hi < 1.0:
            out.append(f"synth.change_frac must satisfy 0 < lo < hi < 1, got {list(self.change_frac)}")
        if self.noise_sigma < 0:
            out.append(f"synth.noise_sigma must be >= 0, got {self.noise_sigma}")
        return out


@dataclass
class TrainConfig:
    steps: int = 2000
    epochs: int | None = None
    batch_size: int = 8
    lr: float = 5e-4
    weight_decay: float = 5e-4
    lr_step: int | None = None
    lr_gamma: float = 0.1
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    eval_interval: int = 500
    augment: bool = True
    crop: int | None = 128
    checkpoint_dir: str = "runs"
    loss: EOLossConfig = field(default_factory=EOLossConfig)
    model: BackboneConfig = field(default_factory=BackboneConfig)

    def problems(self) -> list[str]:
        out = []
        if self.steps < 0:
            out.append(f"train.steps must be >= 0, got {self.steps}")
        if self.epochs is not None and self.epochs < 0:
            out.append(f"train.epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            out.append(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            out.append(f"train.lr must be >= 0, got {self.lr}")
        if self.weight_decay < 0:
            out.append(f"train.weight_decay must be >= 0, got {self.weight_decay}")
        if self.lr_step is not None and self.lr_step < 1:
            out.append(f"train.lr_step must be >= 1, got {self.lr_step}")
        if not 0 < self.lr_gamma <= 1:
            out.append(f"train.lr_gamma must lie in (0, 1], got {self.lr_gamma}")
        if not all(0 <= b < 1 for b in self.betas):
            out.append(f"train.betas must lie in [0, 1), got {list(self.betas)}")
        if self.crop is not None and (self.crop < 32 or self.crop % 32):
            out.append(f"train.crop must be a positive multiple of 32 or null, got {self.crop}")
        if self.eval_interval < 1:
            out.append(f"train.eval_interval must be >= 1, got {self.eval_interval}")
        return out + self.loss.problems() + self.model.problems()

    def validate(self) -> "TrainConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self


def to_dict(cfg: Any) -> dict:
    """Plain-dict view of a (nested) config dataclass, tuples as lists."""
    def conv(v):
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        return v

    return conv(dataclasses.asdict(cfg))


def _build(cls, data: dict, prefix: str, problems: list[str]):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            problems.append(f"unknown config key {prefix}{key}")
            continue
        default = getattr(cls(), key)
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def from_dict(data: dict) -> tuple[TrainConfig, SynthConfig]:
    """Build configs from the nested mapping used by config files.

    Top-level sections are ``train``, ``loss``, ``model`` and ``synth``.
    """
    problems: list[str] = []
    data = dict(data or {})
    for key in data:
        if key not in ("train", "loss", "model", "synth"):
            problems.append(f"unknown config section {key!r}")
    loss = _build(EOLossConfig, data.get("loss") or {}, "loss.", problems)
    model = _build(BackboneConfig, data.get("model") or {}, "model.", problems)
    synth = _build(SynthConfig, data.get("synth") or {}, "synth.", problems)
    train_data = dict(data.get("train") or {})
    for nested in ("loss", "model"):
        if nested in train_data:
            problems.append(f"train.{nested} is not allowed; use the top-level {nested!r} section")
            train_data.pop(nested)
    train = _build(TrainConfig, train_data, "train.", problems)
    train.loss, train.model = loss, model
    if problems:
        raise ConfigError(problems)
    return train, synth


def load_config(path: str | Path) -> tuple[TrainConfig, SynthConfig]:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return from_dict(data)


def dump_config(train: TrainConfig, synth: SynthConfig | None = None) -> dict:
    out = {
        "train": {k: v for k, v in to_dict(train).items() if k not in ("loss", "model")},
        "loss": to_dict(train.loss),
        "model": to_dict(train.model),
    }
    if synth is not None:
        out["synth"] = to_dict(synth)
    return out
