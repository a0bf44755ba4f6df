"""Run configuration: a single flat JSON object with exhaustive validation.

Defaults are the desk-scale setup: small enough that the whole pipeline
(world, teacher, both distillation jobs, alignment, evaluation) finishes in
minutes on one CPU core, large enough that every stage's effect is
measurable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    # world
    concepts: int = 10
    d_img: int = 32
    positions: int = 4
    train_pairs: int = 2000
    eval_per_language: int = 500
    train_sigma: float = 0.1
    eval_sigma: float = 0.1
    aug_dropout: float = 0.1
    aug_jitter: float = 0.05
    # widths
    student_channels: int = 16
    teacher_width: int = 32
    image_hidden_width: int = 32
    image_hidden_layers: int = 1
    text_embed_width: int = 16
    text_hidden_width: int = 16
    text_hidden_layers: int = 1
    # shared loss hyperparameters
    beta: float = 1.0
    tau: float = 1.0
    # stage 1, image
    image_lr: float = 3e-4
    image_weight_decay: float = 0.05
    image_epochs: int = 20
    image_batch: int = 32
    # stage 1, text
    text_lr: float = 1e-3
    text_weight_decay: float = 0.0
    text_epochs: int = 20
    text_batch: int = 32
    # stage 2 (the desk-scale lr; corpus-scale runs want orders of magnitude less)
    align_lr: float = 1e-3
    align_batch: int = 8
    align_passes: int = 3
    # splits and output
    heldout_fraction: float = 0.1
    out_dir: str = "out"

    def validate(self) -> None:
        def positive(name):
            if getattr(self, name) <= 0:
                raise ConfigError(f"config key {name!r} must be positive")

        def at_least(name, bound):
            if getattr(self, name) < bound:
                raise ConfigError(f"config key {name!r} must be >= {bound}")

        at_least("seed", 0)
        at_least("concepts", 2)
        at_least("d_img", self.concepts)
        at_least("positions", 1)
        at_least("train_pairs", 10)
        at_least("eval_per_language", self.concepts)
        at_least("train_sigma", 0.0)
        at_least("eval_sigma", 0.0)
        at_least("aug_jitter", 0.0)
        if not 0.0 <= self.aug_dropout < 1.0:
            raise ConfigError("config key 'aug_dropout' must be in [0, 1)")
        for name in ("student_channels", "teacher_width", "image_hidden_width",
                     "text_embed_width", "text_hidden_width"):
            at_least(name, 1)
        at_least("teacher_width", self.concepts)
        at_least("image_hidden_layers", 0)
        at_least("text_hidden_layers", 0)
        for name in ("beta", "tau", "image_lr", "text_lr", "align_lr"):
            positive(name)
        at_least("image_weight_decay", 0.0)
        at_least("text_weight_decay", 0.0)
        for name in ("image_epochs", "text_epochs", "align_passes",
                     "image_batch", "text_batch", "align_batch"):
            at_least(name, 1)
        if not 0.0 < self.heldout_fraction < 0.5:
            raise ConfigError("config key 'heldout_fraction' must be in (0, 0.5)")

    def to_canonical_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True,
                          separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_canonical_json().encode("utf-8")).hexdigest()


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def config_from_dict(raw: dict) -> RunConfig:
    """Validated config with defaults filled; unknown keys are rejected."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a flat JSON object")
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    coerced = {}
    for key, value in raw.items():
        want = _FIELDS[key]
        if want == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"config key {key!r} must be an integer")
            coerced[key] = value
        elif want == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"config key {key!r} must be a number")
            coerced[key] = float(value)
        else:
            if not isinstance(value, str):
                raise ConfigError(f"config key {key!r} must be a string")
            coerced[key] = value
    cfg = RunConfig(**coerced)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    """Read a flat JSON file into a validated RunConfig."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return config_from_dict(raw)
