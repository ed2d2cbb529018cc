"""Run configuration: one JSON document covering representation, model
architecture, and training, parsed strictly (unknown keys are errors) and
echoed back deterministically for reproducible reruns."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .representation import ReprConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Raised for malformed, unknown, or out-of-range configuration."""


@dataclass(frozen=True)
class ModelSettings:
    """Architecture knobs that do not depend on the dataset.

    Grid shape, token width, and class count are derived from the sensor
    geometry, the representation config, and the labels at run time.
    """

    dim: int = 128
    num_latents: int = 96
    self_blocks: int = 2
    heads: int = 4
    ff_mult: int = 2
    pos_bands: int = 16
    dropout_p: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    repr: ReprConfig
    model: ModelSettings
    train: TrainConfig


# per-section field types; "optional_*" admit JSON null, "float_pair" a
# two-element array
REPR_FIELDS = {
    "delta_t_us": "int",
    "bins": "int",
    "patch_size": "int",
    "min_pixel_pct": "float",
    "min_patches": "int",
    "expansion_step_us": "optional_int",
}
MODEL_FIELDS = {
    "dim": "int",
    "num_latents": "int",
    "self_blocks": "int",
    "heads": "int",
    "ff_mult": "int",
    "pos_bands": "int",
    "dropout_p": "float",
}
TRAIN_FIELDS = {
    "lr": "float",
    "betas": "float_pair",
    "weight_decay": "float",
    "grad_clip_norm": "optional_float",
    "batch_size": "int",
    "epochs": "int",
    "plateau_patience": "int",
    "seed": "int",
    "token_drop_p": "float",
    "temporal_crop_frac": "float",
    "spatial_shift_max": "int",
    "repeat_augmented": "bool",
}
SECTION_FIELDS = {"repr": REPR_FIELDS, "model": MODEL_FIELDS,
                  "train": TRAIN_FIELDS}


def _coerce(kind: str, value, where: str):
    if kind.startswith("optional_"):
        if value is None:
            return None
        kind = kind.removeprefix("optional_")
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if kind == "float_pair":
        if (not isinstance(value, (list, tuple)) or len(value) != 2
                or any(isinstance(v, bool) or not isinstance(v, (int, float))
                       for v in value)):
            raise ConfigError(f"{where}: expected two numbers, got {value!r}")
        return (float(value[0]), float(value[1]))
    raise AssertionError(kind)


def default_run_config() -> RunConfig:
    return RunConfig(repr=ReprConfig(), model=ModelSettings(),
                     train=TrainConfig())


def run_config_from_dict(doc: dict) -> RunConfig:
    """Build a RunConfig from a parsed JSON document, rejecting unknowns."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - set(SECTION_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    built = {}
    for section, field_types in SECTION_FIELDS.items():
        values = doc.get(section, {})
        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be a JSON object")
        bad = set(values) - set(field_types)
        if bad:
            raise ConfigError(f"unknown key(s) in {section!r}: {sorted(bad)}")
        kwargs = {name: _coerce(field_types[name], value, f"{section}.{name}")
                  for name, value in values.items()}
        cls = {"repr": ReprConfig, "model": ModelSettings,
               "train": TrainConfig}[section]
        try:
            built[section] = cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"in section {section!r}: {exc}")
    return RunConfig(**built)


def run_config_to_dict(cfg: RunConfig) -> dict:
    doc = {"repr": asdict(cfg.repr), "model": asdict(cfg.model),
           "train": asdict(cfg.train)}
    doc["train"]["betas"] = list(cfg.train.betas)
    return doc


def dumps_run_config(cfg: RunConfig) -> str:
    return json.dumps(run_config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}")
    return run_config_from_dict(doc)


def save_run_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_run_config(cfg))
