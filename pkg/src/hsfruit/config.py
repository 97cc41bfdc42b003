"""Pipeline configuration: one JSON file plus ``key=value`` overrides."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .benchmark import DEEP_MODELS, REDUCTIONS, SHALLOW_MODELS
from .cube import CAMERAS
from .dataset import CATEGORIES, FRUITS, AugmentationConfig
from .models import ModelConfig
from .training import TrainConfig, config_hash

DATA_ENV = "HSFRUIT_DATA"
SIGNAL_SETS = ("default", "nir900")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted name of the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


@dataclass
class SynthSettings:
    n: int = 60
    balance: tuple = (1.0, 1.0, 1.0)
    signals: str = "default"
    noise_sigma: float = 0.02
    nuisance: float = 0.0
    size: int = 64


@dataclass
class PipelineConfig:
    data_root: str = ""
    output_dir: str = "runs"
    camera: str = "specim_fx10"
    fruit: str = "avocado"
    category: str = "firmness"
    reduction: str = "full"
    model: str = "hscnn"
    seed: int = 0
    views: int = 8
    train: dict = field(default_factory=lambda: TrainConfig().to_dict())
    augmentation: dict = field(default_factory=lambda: AugmentationConfig().to_dict())
    model_config: dict = field(default_factory=dict)
    synth: dict = field(default_factory=lambda: asdict(SynthSettings()))

    def __post_init__(self):
        if not self.data_root:
            self.data_root = os.environ.get(DATA_ENV, ".")

    # -- typed views; each raises ConfigError naming the field ------------------------

    def train_config(self) -> TrainConfig:
        return _build(TrainConfig, {**self.train, "seed": self.seed}, "train")

    def augmentation_config(self) -> AugmentationConfig:
        d = dict(self.augmentation)
        if "cut_range" in d:
            d["cut_range"] = tuple(d["cut_range"])
        return _build(AugmentationConfig, {**d, "seed": self.seed}, "augmentation")

    def model_cfg(self, in_bands: int) -> Optional[ModelConfig]:
        if self.model != "hscnn":
            return None
        return _build(ModelConfig, {**self.model_config, "in_bands": in_bands}, "model_config")

    def synth_settings(self) -> SynthSettings:
        s = _build(SynthSettings, self.synth, "synth")
        if s.n < 3:
            raise ConfigError("synth.n", "need at least 3 recordings")
        if s.signals not in SIGNAL_SETS:
            raise ConfigError("synth.signals", f"'{s.signals}' not in {list(SIGNAL_SETS)}")
        if s.noise_sigma < 0:
            raise ConfigError("synth.noise_sigma", "must be nonnegative")
        return s

    def validate(self) -> "PipelineConfig":
        choices = {
            "camera": tuple(CAMERAS), "fruit": FRUITS, "category": CATEGORIES,
            "reduction": REDUCTIONS, "model": DEEP_MODELS + SHALLOW_MODELS,
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(name, f"'{getattr(self, name)}' not in {list(allowed)}")
        if self.category == "sweetness" and self.fruit != "kiwi":
            raise ConfigError("category", "sweetness labels exist for kiwi only")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", "must be a nonnegative integer")
        if not isinstance(self.views, int) or self.views < 1:
            raise ConfigError("views", "must be a positive integer")
        self.train_config()
        self.augmentation_config()
        self.model_cfg(CAMERAS[self.camera].band_count)
        self.synth_settings()
        return self

    # -- serialisation ---------------------------------------------------------------

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(key, "unknown field")
        return cls(**d)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"{path} is not valid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ConfigError("<file>", f"{path} must hold a JSON object")
        return cls.from_dict(d)

    def hash(self, *extra) -> str:
        d = self.to_dict()
        # where data comes from matters, where results go does not
        d.pop("output_dir")
        return config_hash(d, *extra)


def _build(cls, values: dict, prefix: str):
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"{prefix}.{key}", "unknown field")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        name = next((k for k in values if k in msg), None)
        raise ConfigError(f"{prefix}.{name}" if name else prefix, msg) from exc


def apply_override(cfg: PipelineConfig, assignment: str) -> PipelineConfig:
    """Apply ``a.b=value``; the value is parsed as JSON, falling back to a string."""
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    d = cfg.to_dict()
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(key, "unknown field")
        node = node[p]
    if len(parts) == 1 and parts[0] not in d:
        raise ConfigError(key, "unknown field")
    node[parts[-1]] = value
    return PipelineConfig.from_dict(d)
