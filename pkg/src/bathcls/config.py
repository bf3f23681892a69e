"""Strict YAML run configuration.

Example document::

    seed: 0
    threads: 1
    model: {variant: decusr_l, feb_filters: [16, 8, 8, 8], rb_count: 3,
            rb_filters: 8, rb_depth: 2, kernel_size: 3}
    hyperparams: {optimizer: rmsprop, activation: elu, learning_rate: 0.001,
                  use_maxpool: true, use_batchnorm: false}
    train: {epochs_max: 50, batch_size: 16, validation_fraction: 0.1,
            patience: 10, image_size: 256}
    data: {source: manifest}          # or {source: synthetic, n_train: 64, n_test: 32}
    paths: {manifest: hotelbath.csv, image_root: images, output_dir: runs/a}
    sweep: {...}                      # optional, see SweepSettings

Every section is optional and defaults as in the dataclasses below. Unknown
keys anywhere are an error. Relative paths resolve against the config file.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .dataset import ManifestSource, SyntheticSource, load_manifest
from .hparams import ACTIVATIONS, FLAGS, LEARNING_RATES, HyperParams
from .model import VARIANTS, ModelConfig
from .optim import OPTIMIZERS
from .sweep import PHASE2_SIZES
from .trainer import TrainSpec


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    variant: str = "decusr_l"
    feb_filters: list = field(default_factory=lambda: [16, 8, 8, 8])
    rb_count: int = 3
    rb_filters: int = 8
    rb_depth: int = 2
    kernel_size: int = 3


@dataclass
class TrainSection:
    epochs_max: int = 50
    batch_size: int = 16
    validation_fraction: float = 0.10
    patience: Optional[int] = 10
    image_size: int = 256


@dataclass
class DataSection:
    source: str = "manifest"
    n_train: int = 64
    n_test: int = 32


@dataclass
class PathsSection:
    manifest: Optional[str] = None
    image_root: Optional[str] = None
    output_dir: str = "out"


@dataclass
class SweepSettings:
    variants: list = field(default_factory=lambda: list(VARIANTS))
    optimizers: list = field(default_factory=lambda: list(OPTIMIZERS))
    activations: list = field(default_factory=lambda: list(ACTIVATIONS))
    learning_rates: list = field(default_factory=lambda: list(LEARNING_RATES))
    use_maxpool: list = field(default_factory=lambda: list(FLAGS))
    use_batchnorm: list = field(default_factory=lambda: list(FLAGS))
    phase1_epochs: int = 50
    phase1_image_size: int = 256
    phase2_epochs: int = 500
    phase2_sizes: list = field(default_factory=lambda: list(PHASE2_SIZES))
    per_model: int = 2
    workers: int = 1


@dataclass
class RunConfig:
    seed: int = 0
    threads: Optional[int] = None
    model: ModelSection = field(default_factory=ModelSection)
    hyperparams: HyperParams = field(default_factory=HyperParams)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    paths: PathsSection = field(default_factory=PathsSection)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    base_dir: Path = field(default=Path("."), repr=False)

    def model_config(self, image_size: Optional[int] = None) -> ModelConfig:
        hp = self.hyperparams
        return ModelConfig(
            variant=self.model.variant,
            feb_filters=tuple(self.model.feb_filters),
            rb_count=self.model.rb_count,
            rb_filters=self.model.rb_filters,
            rb_depth=self.model.rb_depth,
            kernel_size=self.model.kernel_size,
            activation=hp.activation,
            use_maxpool=hp.use_maxpool,
            use_batchnorm=hp.use_batchnorm,
            input_size=image_size or self.train.image_size,
        )

    def train_spec(self) -> TrainSpec:
        t = self.train
        return TrainSpec(self.hyperparams, t.epochs_max, t.batch_size, t.validation_fraction, t.patience, self.seed, t.image_size)

    def resolve(self, p: Optional[str]) -> Optional[Path]:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.paths.output_dir)

    def source(self):
        if self.data.source == "synthetic":
            return SyntheticSource(self.data.n_train, self.data.n_test, self.seed)
        return ManifestSource(load_manifest(self.resolve(self.paths.manifest)), self.resolve(self.paths.image_root))


_SECTIONS = {
    "model": ModelSection,
    "hyperparams": HyperParams,
    "train": TrainSection,
    "data": DataSection,
    "paths": PathsSection,
    "sweep": SweepSettings,
}


def _build(cls, raw, where: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def _check_int(value, name, minimum=1, allow_none=False):
    if value is None and allow_none:
        return
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}")


def _validate(cfg: RunConfig) -> None:
    _check_int(cfg.seed, "seed", 0)
    _check_int(cfg.threads, "threads", 1, allow_none=True)
    t = cfg.train
    for k in ("epochs_max", "batch_size", "image_size"):
        _check_int(getattr(t, k), f"train.{k}")
    _check_int(t.patience, "train.patience", 1, allow_none=True)
    if not isinstance(t.validation_fraction, (int, float)) or not 0 < t.validation_fraction < 1:
        raise ConfigError("train.validation_fraction must be in (0, 1)")
    try:
        cfg.model_config()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"model: {e}") from e
    if cfg.data.source not in ("manifest", "synthetic"):
        raise ConfigError("data.source must be 'manifest' or 'synthetic'")
    if cfg.data.source == "synthetic":
        for k in ("n_train", "n_test"):
            v = getattr(cfg.data, k)
            _check_int(v, f"data.{k}", 2)
            if v % 2:
                raise ConfigError(f"data.{k} must be even")
    s = cfg.sweep
    for name, allowed in (
        ("variants", VARIANTS), ("optimizers", OPTIMIZERS), ("activations", ACTIVATIONS),
        ("learning_rates", LEARNING_RATES), ("use_maxpool", FLAGS), ("use_batchnorm", FLAGS),
    ):
        values = getattr(s, name)
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{name} must be a nonempty list")
        bad = [v for v in values if v not in allowed or (isinstance(v, bool) != isinstance(allowed[0], bool))]
        if bad or len(set(values)) != len(values):
            raise ConfigError(f"sweep.{name}: values must be distinct members of {list(allowed)}")
    for k in ("phase1_epochs", "phase1_image_size", "phase2_epochs", "per_model", "workers"):
        _check_int(getattr(s, k), f"sweep.{k}")
    if not isinstance(s.phase2_sizes, list) or not s.phase2_sizes:
        raise ConfigError("sweep.phase2_sizes must be a nonempty list")
    for v in s.phase2_sizes:
        _check_int(v, "sweep.phase2_sizes entries")


def check_paths(cfg: RunConfig) -> None:
    """Fail fast on missing inputs before any training starts."""
    if cfg.data.source != "manifest":
        return
    for key in ("manifest", "image_root"):
        p = cfg.resolve(getattr(cfg.paths, key))
        if p is None:
            raise ConfigError(f"paths.{key} is required for a manifest data source")
        if not p.exists():
            raise ConfigError(f"paths.{key}: {p} does not exist")


def _as_float(v):
    # YAML 1.1 reads "1e-3" (no dot) as a string.
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return v
    return v


def _coerce_rates(raw: dict) -> dict:
    raw = dict(raw)
    hp = raw.get("hyperparams")
    if isinstance(hp, dict) and "learning_rate" in hp:
        raw["hyperparams"] = {**hp, "learning_rate": _as_float(hp["learning_rate"])}
    sw = raw.get("sweep")
    if isinstance(sw, dict) and isinstance(sw.get("learning_rates"), list):
        raw["sweep"] = {**sw, "learning_rates": [_as_float(v) for v in sw["learning_rates"]]}
    return raw


def parse_config(raw, base_dir=Path(".")) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    top = {"seed", "threads", *_SECTIONS}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    raw = _coerce_rates(raw)
    sections = {k: _build(cls, raw.get(k), k) for k, cls in _SECTIONS.items()}
    cfg = RunConfig(seed=raw.get("seed", 0), threads=raw.get("threads"), base_dir=Path(base_dir), **sections)
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML ({e})") from e
    return parse_config(raw, path.parent)
