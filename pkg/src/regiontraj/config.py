"""Flat declarative run configuration with CLI overrides.

Precedence: --set flag > config file > dataclass default. Unknown keys are
rejected so typos fail before any work starts.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import yaml

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class DataConfig:
    dataset: str = "ethucy"  # ethucy | sdd
    root: str = "data"
    scenes: list = field(default_factory=list)  # scene_id -> file stem under root
    held_out: str = ""
    sdd_manifest: str = ""
    tau: int = 8
    horizon: int = 12
    stride: int = 1
    frame_rate: float = 2.5
    rotation_step_deg: int = 30
    augment_rotations: bool = False


@dataclass
class DensityConfig:
    map_size: int = 80
    sigma: float = 2.0
    margin: float = 1.0


@dataclass
class EvalConfig:
    k: int = 20
    select: str = "min_fde_then_ade"  # or min_ade
    kde_samples: int = 2000
    sigma: float = 0.1  # robustness perturbation std, world units


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    density: DensityConfig = field(default_factory=DensityConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    cache_dir: str = "cache"
    out_dir: str = "runs"
    deterministic: bool = False

    def to_dict(self):
        d = asdict(self)
        d["model"]["ae_channels"] = list(d["model"]["ae_channels"])
        return d

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {
    "data": DataConfig,
    "density": DensityConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}
_TOP_SCALARS = {"cache_dir", "out_dir", "deterministic"}


def _build_section(cls, raw, where):
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        if k == "ae_channels":
            v = tuple(v)
        kwargs[k] = v
    return cls(**kwargs)


def load_config(path=None, overrides=()):
    """Build a RunConfig from an optional YAML file plus 'section.key=value'
    override strings."""
    raw = {}
    if path is not None:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
    unknown = set(raw) - set(_SECTIONS) - _TOP_SCALARS
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} must look like section.key=value")
        key, value = ov.split("=", 1)
        value = yaml.safe_load(value)
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            raw.setdefault(section, {})[name] = value
        elif key in _TOP_SCALARS:
            raw[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    kwargs = {}
    for section, cls in _SECTIONS.items():
        kwargs[section] = _build_section(cls, raw.get(section, {}) or {}, section)
    for k in _TOP_SCALARS:
        if k in raw:
            kwargs[k] = raw[k]
    return RunConfig(**kwargs)


def save_config(cfg, path):
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=True)
