"""Flat dotted-key configuration with file, flag, and environment overrides.

Config files are plain text, one `key=value` per line (# comments allowed).
Every key can be overridden by a CLI flag of the same name. The environment
variable SODYOLO_SEED, when set, overrides every seed key (CI reproducibility).
"""

from __future__ import annotations

import os
from pathlib import Path

from .data import SynthConfig
from .errors import InvalidArgumentError
from .model import ModelConfig
from .postprocess import SuppressionConfig
from .train import TrainConfig

SEED_ENV_VAR = "SODYOLO_SEED"

# key -> (type tag, default); type tags: int, float, bool, str, ints (csv)
SCHEMA: dict[str, tuple[str, object]] = {
    "model.input_size": ("int", 64),
    "model.num_classes": ("int", 10),
    "model.widths": ("ints", (8, 16, 32, 64)),
    "model.c2f_depth": ("int", 1),
    "model.neck_channels": ("int", 16),
    "model.conf_threshold": ("float", 0.25),
    "model.seed": ("int", 0),
    "train.lr_peak": ("float", 0.005),
    "train.warmup_epochs": ("int", 3),
    "train.momentum": ("float", 0.937),
    "train.weight_decay": ("float", 0.0005),
    "train.epochs": ("int", 40),
    "train.batch_size": ("int", 8),
    "train.final_lr_factor": ("float", 0.01),
    "train.seed": ("int", 0),
    "suppress.mode": ("str", "soft-linear"),
    "suppress.nt": ("float", 0.5),
    "suppress.score_floor": ("float", 0.001),
    "suppress.class_agnostic": ("bool", False),
    "synth.image_size": ("int", 640),
    "synth.images": ("int", 16),
    "synth.objects_min": ("int", 1),
    "synth.objects_max": ("int", 4),
    "synth.tiny_fraction": ("float", 0.75),
    "synth.clutter": ("float", 0.25),
    "synth.num_classes": ("int", 10),
    "synth.seed": ("int", 0),
    "eval.operating_score": ("float", 0.25),
}

# the 640-input setup used for full-scale runs; desk scale is the default
PRESETS: dict[str, dict[str, object]] = {
    "desk": {},
    "paper": {
        "model.input_size": 640,
        "model.widths": (32, 64, 128, 256),
        "model.neck_channels": 64,
        "train.epochs": 200,
        "train.batch_size": 8,
    },
}

SEED_KEYS = ("model.seed", "train.seed", "synth.seed")


def _convert(key: str, raw) -> object:
    if key not in SCHEMA:
        raise InvalidArgumentError(f"unknown config key {key!r}")
    tag, _default = SCHEMA[key]
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if tag == "ints":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        raise InvalidArgumentError(f"config key {key}: bad value {raw!r}") from exc


def parse_config_file(text: str) -> dict[str, object]:
    out: dict[str, object] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"config line {line_no}: expected key=value")
        key, _, value = line.partition("=")
        out[key.strip()] = _convert(key.strip(), value)
    return out


def resolve(preset: str | None = None, config_file=None,
            overrides: dict[str, object] | None = None) -> dict[str, object]:
    """defaults < preset < file < flags < SODYOLO_SEED."""
    cfg = {key: default for key, (_tag, default) in SCHEMA.items()}
    if preset:
        if preset not in PRESETS:
            raise InvalidArgumentError(
                f"unknown preset {preset!r} (available: {sorted(PRESETS)})")
        cfg.update(PRESETS[preset])
    if config_file:
        cfg.update(parse_config_file(Path(config_file).read_text()))
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = _convert(key, value)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        for key in SEED_KEYS:
            cfg[key] = _convert(key, env_seed)
    return cfg


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(
        input_size=cfg["model.input_size"],
        num_classes=cfg["model.num_classes"],
        width_per_level=tuple(cfg["model.widths"]),
        c2f_depth=cfg["model.c2f_depth"],
        neck_channels=cfg["model.neck_channels"],
        conf_threshold=cfg["model.conf_threshold"])


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        lr_peak=cfg["train.lr_peak"],
        warmup_epochs=cfg["train.warmup_epochs"],
        momentum=cfg["train.momentum"],
        weight_decay=cfg["train.weight_decay"],
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        final_lr_factor=cfg["train.final_lr_factor"],
        seed=cfg["train.seed"])


def suppression_config(cfg: dict) -> SuppressionConfig:
    return SuppressionConfig(
        nt=cfg["suppress.nt"],
        score_floor=cfg["suppress.score_floor"],
        mode=cfg["suppress.mode"],
        class_agnostic=cfg["suppress.class_agnostic"])


def synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig(
        image_size=cfg["synth.image_size"],
        num_images=cfg["synth.images"],
        objects_per_image=(cfg["synth.objects_min"], cfg["synth.objects_max"]),
        tiny_fraction_target=cfg["synth.tiny_fraction"],
        clutter_level=cfg["synth.clutter"],
        num_classes=cfg["synth.num_classes"],
        seed=cfg["synth.seed"])
