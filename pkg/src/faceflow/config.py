"""Training configuration, plain-text config files, and flag overrides.

Config files are INI-style sections of key = value pairs; every key is
optional and has a documented default, unknown sections or keys are rejected,
and each key can be overridden by the matching command-line flag. The
effective configuration is echoed into every output directory for provenance.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights


@dataclass
class TrainConfig:
    image_size: int = 64
    batch_size: int = 8
    learning_rate: float = 0.002
    total_steps: int = 2000
    seed: int = 0
    base_width: int = 16
    alpha: float = 1.0
    beta1: float = 0.5
    beta2: float = 0.999
    grad_clip: float = 5.0
    eval_interval: int = 200
    checkpoint_interval: int = 1000
    deterministic: bool = True
    weights: LossWeights = field(default_factory=LossWeights)

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.total_steps < 0:
            raise ConfigError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.image_size < 16 or self.image_size % 8:
            raise ConfigError(f"image_size must be >= 16 and divisible by 8, got {self.image_size}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["weights"] = self.weights.as_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        weights = LossWeights(**d.pop("weights"))
        return TrainConfig(weights=weights, **d)

    def structural_fields(self) -> dict:
        """Fields that must match for a checkpoint to be loadable into a run."""
        d = self.to_dict()
        for key in ("total_steps", "eval_interval", "checkpoint_interval"):
            d.pop(key)
        return d


@dataclass
class AppConfig:
    """Full command configuration: training plus paths and the attribute preset."""

    train: TrainConfig = field(default_factory=TrainConfig)
    data_root: str = "data"
    attribute: str = "mustache"
    out_dir: str = "out"


# section -> key -> (python type, pull from AppConfig, push into AppConfig)
_SCHEMA = {
    "data": {
        "root": (str, lambda c: c.data_root, lambda c, v: setattr(c, "data_root", v)),
        "attribute": (str, lambda c: c.attribute, lambda c, v: setattr(c, "attribute", v)),
    },
    "output": {
        "dir": (str, lambda c: c.out_dir, lambda c, v: setattr(c, "out_dir", v)),
    },
    "train": {},
    "model": {},
    "loss": {},
}

_TRAIN_KEYS = {
    "image_size": int,
    "batch_size": int,
    "learning_rate": float,
    "total_steps": int,
    "seed": int,
    "beta1": float,
    "beta2": float,
    "grad_clip": float,
    "eval_interval": int,
    "checkpoint_interval": int,
    "deterministic": bool,
}
_MODEL_KEYS = {"base_width": int, "alpha": float}
_LOSS_KEYS = {f.name: float for f in dataclasses.fields(LossWeights)}

for key, typ in _TRAIN_KEYS.items():
    _SCHEMA["train"][key] = (
        typ,
        (lambda k: lambda c: getattr(c.train, k))(key),
        (lambda k: lambda c, v: setattr(c.train, k, v))(key),
    )
for key, typ in _MODEL_KEYS.items():
    _SCHEMA["model"][key] = (
        typ,
        (lambda k: lambda c: getattr(c.train, k))(key),
        (lambda k: lambda c, v: setattr(c.train, k, v))(key),
    )
for key, typ in _LOSS_KEYS.items():
    _SCHEMA["loss"][key] = (
        typ,
        (lambda k: lambda c: getattr(c.train.weights, k))(key),
        (lambda k: lambda c, v: setattr(c.train.weights, k, v))(key),
    )


def _parse_value(raw: str, typ, where: str):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ.__name__}") from exc


def load_config_file(path) -> AppConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(p.read_text(), source=str(p))
    except configparser.Error as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    cfg = AppConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{p}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{p}: unknown key '{key}' in section [{section}]")
            typ, _, setter = _SCHEMA[section][key]
            setter(cfg, _parse_value(raw, typ, f"{p} [{section}] {key}"))
    return cfg


def apply_overrides(cfg: AppConfig, overrides: dict) -> AppConfig:
    """Apply flat 'section.key' -> value overrides (already typed or raw str)."""
    for dotted, value in overrides.items():
        if value is None:
            continue
        try:
            section, key = dotted.split(".", 1)
            typ, _, setter = _SCHEMA[section][key]
        except (ValueError, KeyError):
            raise ConfigError(f"unknown config key '{dotted}'")
        if isinstance(value, str):
            value = _parse_value(value, typ, dotted)
        setter(cfg, typ(value) if typ is not bool else bool(value))
    return cfg


def render_config(cfg: AppConfig) -> str:
    lines = []
    for section in ("data", "train", "model", "loss", "output"):
        lines.append(f"[{section}]")
        for key, (typ, getter, _) in _SCHEMA[section].items():
            lines.append(f"{key} = {getter(cfg)}")
        lines.append("")
    return "\n".join(lines)


def echo_config(cfg: AppConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "effective_config.ini"
    target.write_text(render_config(cfg))
    return target
