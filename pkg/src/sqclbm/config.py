"""Flat ``key=value`` run configuration covering data generation, training and simulation.

Blank lines and ``#`` comments are ignored.  Omitted keys keep their
defaults; unknown keys are rejected with their line number.
"""

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .hybrid import SimConfig
from .training import DataGenConfig, TrainConfig

MODES = ("gen-data", "train", "evaluate", "gate-count", "simulate", "compare")


class ConfigError(ValueError):
    pass


def _to_int(text):
    value = float(text.replace("_", ""))
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _to_float(text):
    value = float(text)
    if math.isnan(value):
        raise ValueError("NaN is not allowed")
    return value


def _optional(conv):
    def parse(text):
        return None if text.lower() in ("", "none", "auto") else conv(text)

    return parse


# key -> (section, attribute, converter); tuple-valued ranges use (attribute, index)
KEYS = {
    "mode": (None, "mode", str),
    "seed": (None, "seed", _to_int),
    "n_samples": ("datagen", "n_samples", _to_int),
    "rho_min": ("datagen", ("rho_range", 0), _to_float),
    "rho_max": ("datagen", ("rho_range", 1), _to_float),
    "speed_min": ("datagen", ("speed_range", 0), _to_float),
    "speed_max": ("datagen", ("speed_range", 1), _to_float),
    "sigma_neq_min": ("datagen", ("sigma_neq_range", 0), _to_float),
    "sigma_neq_max": ("datagen", ("sigma_neq_range", 1), _to_float),
    "tau": ("datagen", "tau", _to_float),
    "test_split": ("datagen", "test_split", _to_float),
    "block": ("train", "block", str),
    "n_blocks": ("train", "n_blocks", _to_int),
    "tail": ("train", "tail", str),
    "learning_rate": ("train", "learning_rate", _to_float),
    "iterations": ("train", "iterations", _to_int),
    "batch_size": ("train", "batch_size", _to_int),
    "alpha0": ("train", "alpha0", _to_float),
    "alpha_step_every": ("train", "alpha_step_every", _to_int),
    "alpha_max": ("train", "alpha_max", _to_float),
    "epsilon_acc": ("train", "epsilon_acc", _to_float),
    "init_low": ("train", "init_low", _to_float),
    "init_high": ("train", "init_high", _to_float),
    "val_every": ("train", "val_every", _to_int),
    "n_val": ("train", "n_val", _to_int),
    "case": ("sim", "case", str),
    "nx": ("sim", "nx", _to_int),
    "ny": ("sim", "ny", _to_int),
    "sim_tau": ("sim", "tau", _optional(_to_float)),
    "u0": ("sim", "u0", _to_float),
    "u_lid": ("sim", "u_lid", _to_float),
    "re": ("sim", "re", _to_float),
    "steps": ("sim", "steps", _to_int),
    "backend": ("sim", "backend", str),
    "checkpoint": ("sim", "checkpoint", _optional(str)),
    "snapshot_every": ("sim", "snapshot_every", _to_int),
    "surplus": ("sim", "surplus", str),
}


@dataclass
class RunConfig:
    mode: str = None
    seed: int = 0
    datagen: DataGenConfig = field(default_factory=DataGenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def set(self, key, value):
        """Set a flat key from an already-converted value."""
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        section, attr, _ = KEYS[key]
        target = self if section is None else getattr(self, section)
        if isinstance(attr, tuple):
            name, i = attr
            pair = list(getattr(target, name))
            pair[i] = value
            setattr(target, name, tuple(pair))
        else:
            setattr(target, attr, value)
        if key == "seed":
            self.datagen.seed = self.train.seed = value

    def set_text(self, key, text):
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        try:
            value = KEYS[key][2](text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
        self.set(key, value)

    def validate(self):
        if self.mode is not None and self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for section in (self.datagen, self.train, self.sim):
            try:
                section.validate()
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return self

    def to_dict(self):
        return {
            "mode": self.mode,
            "seed": self.seed,
            "datagen": self.datagen.to_dict(),
            "train": self.train.to_dict(),
            "sim": asdict(self.sim),
        }


def parse_config_text(text, source="<string>"):
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            cfg.set_text(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(path):
    """Parse a run-config file; ``None`` gives the all-defaults configuration."""
    if path is None:
        return RunConfig().validate()
    return parse_config_text(Path(path).read_text(), str(path))


def config_keys():
    return sorted(KEYS)


def section_fields(section):
    return [f.name for f in fields(section)]
