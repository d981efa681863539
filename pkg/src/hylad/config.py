"""Strict YAML <-> dataclass config loading.

Unknown keys are rejected rather than ignored: silent config typos are the
main reproducibility hazard in experiment plumbing.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .models import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _build(cls, doc: dict, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(doc).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(fields)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}; "
                          f"allowed: {sorted(fields)}")
    kwargs = {}
    for name, value in doc.items():
        f = fields[name]
        if f.type == "ModelConfig" or f.type is ModelConfig:
            value = _build(ModelConfig, value, f"{path}.{name}")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from None


def load_train_config(path) -> TrainConfig:
    doc = yaml.safe_load(Path(path).read_text())
    return _build(TrainConfig, doc, "train")


def dump_train_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
