"""One JSON configuration document for the whole pipeline.

Sections ``model``, ``data``, ``train`` and ``eval`` map onto the
corresponding dataclasses.  Unknown keys anywhere are rejected rather
than silently ignored, and ``--set section.key=value`` overrides are
applied before validation.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .data import SyntheticSpec
from .errors import ConfigError
from .model import BackboneConfig
from .train import TrainConfig


@dataclass(frozen=True)
class EvalSettings:
    probe_epochs: int = 300
    probe_lr: float = 0.5
    retrieval_k: int = 1
    feature: str = "descriptor"

    def __post_init__(self):
        if self.probe_epochs < 1 or self.probe_lr <= 0 or self.retrieval_k < 1:
            raise ConfigError("probe_epochs, probe_lr and retrieval_k must be positive")
        if self.feature not in ("descriptor", "channel"):
            raise ConfigError(f"unknown feature kind {self.feature!r}")


@dataclass(frozen=True)
class AppConfig:
    model: BackboneConfig
    data: SyntheticSpec
    train: TrainConfig
    eval: EvalSettings


_SECTIONS = {
    "model": BackboneConfig,
    "data": SyntheticSpec,
    "train": TrainConfig,
    "eval": EvalSettings,
}


def default_config_dict() -> dict:
    """The desk-scale defaults, as a plain JSON-ready dict."""
    return {
        "model": {
            "input_shape": [3, 8, 16, 16],
            "channels_per_stage": [12, 16],
            "kernel": [3, 3, 3],
            "strides_per_stage": [[2, 2, 2], [1, 2, 2]],
            "padding": [1, 1, 1],
            "tie_heads": False,
        },
        "data": {
            "num_clips": 200,
            "classes": list(SyntheticSpec().classes),
            "shape": [3, 8, 16, 16],
            "texture_noise": 0.25,
            "seed": 7,
        },
        "train": {
            "learning_rate": 0.01,
            "weight_decay": 5e-4,
            "momentum": 0.9,
            "epochs": 10,
            "lr_decay_every": 10,
            "lr_decay_factor": 0.1,
            "batch_size": 8,
            "gamma": 0.1,
            "alpha": 1.0,
            "crop_size": [8, 16, 16],
            "seed": 0,
            "augment_variant": "intra",
            "noise_sigma": 0.1,
        },
        "eval": {
            "probe_epochs": 300,
            "probe_lr": 0.5,
            "retrieval_k": 1,
            "feature": "descriptor",
        },
    }


def _build_section(name: str, cls, payload: dict):
    if not isinstance(payload, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = payload.keys() - allowed
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    # JSON arrays arrive as lists; the dataclasses normalize to tuples
    try:
        return cls(**payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {name!r}: {exc}") from exc


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(document: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` pairs; values parse as JSON when possible."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {dotted!r} must be section.key")
        section, key = parts
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        document.setdefault(section, {})[key] = _coerce(raw)
    return document


def config_from_dict(document: dict) -> AppConfig:
    unknown = document.keys() - _SECTIONS.keys()
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    merged = default_config_dict()
    for section, payload in document.items():
        if not isinstance(payload, dict):
            raise ConfigError(f"section {section!r} must be an object")
        merged[section].update(payload)
    built = {
        name: _build_section(name, cls, merged[name]) for name, cls in _SECTIONS.items()
    }
    return AppConfig(**built)


def load_config(path=None, overrides: list[str] | None = None) -> AppConfig:
    """Read the JSON document (defaults when ``path`` is None) and build it."""
    if path is None:
        document = {}
    else:
        try:
            document = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(document, dict):
            raise ConfigError(f"{path}: top level must be an object")
    if overrides:
        document = apply_overrides(document, list(overrides))
    return config_from_dict(document)
