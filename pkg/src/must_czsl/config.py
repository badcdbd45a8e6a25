"""Run configuration: dataset profiles, JSON config files, validation.

A config file is a JSON object with optional sections ``synth``, ``model``,
``loss``, ``train`` and ``inference`` plus a top-level ``profile``. Profile
defaults are applied first, then file values, then CLI overrides. Unknown
keys are rejected with their dotted path.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Any

from .data import SynthConfig
from .errors import ConfigError
from .infer import InferenceRule
from .loss import LossConfig
from .model import ModelConfig

# Per-dataset hyper-parameters and split shapes (states, objects,
# train seen pairs, val seen/unseen pairs, test seen/unseen pairs).
PROFILES: dict[str, dict[str, Any]] = {
    "mit-states": {
        "loss": {"gamma": 1.0, "lam": 1.5},
        "train": {"lr": 5e-5, "batch_size": 128},
        "model": {"feat_dim": 512, "emb_dim": 512, "word_dim": 300},
        "shape": {"states": 115, "objects": 245, "train_pairs": 1262,
                  "val_pairs": [300, 300], "test_pairs": [400, 400]},
    },
    "ut-zappos": {
        "loss": {"gamma": 1.0, "lam": 1.0},
        "train": {"lr": 5e-5, "batch_size": 128},
        "model": {"feat_dim": 512, "emb_dim": 512, "word_dim": 300},
        "shape": {"states": 16, "objects": 12, "train_pairs": 83,
                  "val_pairs": [15, 15], "test_pairs": [18, 18]},
    },
    "cgqa": {
        "loss": {"gamma": 6.0, "lam": 1.0},
        "train": {"lr": 5e-5, "batch_size": 128},
        "model": {"feat_dim": 512, "emb_dim": 512, "word_dim": 300},
        "shape": {"states": 413, "objects": 674, "train_pairs": 5592,
                  "val_pairs": [1252, 1040], "test_pairs": [888, 923]},
    },
    # Desk-scale profile for the synthetic generator. The heads are small
    # and trained at a larger learning rate with a sharper softmax.
    "synth": {
        "loss": {"gamma": 1.0, "lam": 1.0, "temperature": 0.1},
        "train": {"lr": 1e-3, "batch_size": 128, "epochs": 40, "eval_every": 5, "patience": 50},
        "model": {"feat_dim": 64, "emb_dim": 64, "word_dim": 32},
        "shape": {"states": 12, "objects": 10, "train_pairs": 60},
    },
}

ABLATIONS = {
    "base": {"weight_components": False, "weight_pair": False},
    "components": {"weight_components": True, "weight_pair": False},
    "composition": {"weight_components": False, "weight_pair": True},
    "full": {"weight_components": True, "weight_pair": True},
}


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 128
    lr: float = 5e-5
    eval_every: int = 1
    patience: int = 50
    seed: int = 0
    inference: str = "must"  # rule used for validation model selection

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("train.epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("train.lr must be > 0")
        if self.eval_every < 1:
            raise ConfigError("train.eval_every must be >= 1")
        if self.patience < 1:
            raise ConfigError("train.patience must be >= 1")


SECTIONS = {
    "synth": SynthConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "inference": InferenceRule,
}
TOP_LEVEL = {"profile", "ablation"} | set(SECTIONS)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    profile: str
    ablation: str
    synth: SynthConfig
    model: ModelConfig
    loss: LossConfig
    train: TrainConfig
    inference: InferenceRule

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "ablation": self.ablation,
            **{name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def read_config_file(path) -> dict:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _merge(dst: dict, src: dict) -> None:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _merge(dst[k], v)
        else:
            dst[k] = v


def _build(cls, section: str, values: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    for k in values:
        if k not in known:
            raise ConfigError(f"unknown config field {section}.{k}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"{section}: {e}") from None


def resolve(file_values: dict | None = None, overrides: dict | None = None, profile: str | None = None) -> RunConfig:
    """Profile defaults <- file values <- overrides, then validate."""
    merged: dict[str, Any] = {}
    for src in (file_values or {}, overrides or {}):
        for k in src:
            if k not in TOP_LEVEL:
                raise ConfigError(f"unknown config field {k}")
            if k in SECTIONS and not isinstance(src[k], dict):
                raise ConfigError(f"config field {k} must be an object")
    name = profile or (overrides or {}).get("profile") or (file_values or {}).get("profile") or "synth"
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    prof = PROFILES[name]
    for sec in ("loss", "train", "model"):
        merged[sec] = dict(prof.get(sec, {}))
    _merge(merged, {k: v for k, v in (file_values or {}).items() if k != "profile"})
    _merge(merged, {k: v for k, v in (overrides or {}).items() if k != "profile"})

    ablation = merged.pop("ablation", "full")
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; choose from {sorted(ABLATIONS)}")
    loss_vals = dict(merged.get("loss", {}))
    for k, v in ABLATIONS[ablation].items():
        loss_vals.setdefault(k, v)

    return RunConfig(
        profile=name,
        ablation=ablation,
        synth=_build(SynthConfig, "synth", merged.get("synth", {})),
        model=_build(ModelConfig, "model", merged.get("model", {})),
        loss=_build(LossConfig, "loss", loss_vals),
        train=_build(TrainConfig, "train", merged.get("train", {})),
        inference=_build(InferenceRule, "inference", merged.get("inference", {})),
    )
