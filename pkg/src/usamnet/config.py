"""Run configuration file (YAML).

Schema (every section and key optional; unknown keys are rejected)::

    model:          # ModelConfig fields
      use_segmentation: true
      use_attention: true
      input_height: 64
      input_width: 64
      width_divisor: 1
    train:          # TrainConfig fields except ``augment``
      epochs: 30
      base_lr: 0.001
      lr_decay: 0.9
      batch_size: 2
      steps_per_epoch: null
      max_steps: null
      seed: 0
    augment:        # AugmentConfig fields
      jitter_strength: 0.1
      top_replace_prob: 0.5
      top_fraction: 0.25
      sky_masking_enabled: false
    metrics:        # MetricConfig fields
      tau_abs: 3.0
      tau_rel: 0.05
      thresholds: [1, 2, 3]
    buckets:        # ArdBucketConfig fields
      min_depth: 0.0
      max_depth: 80.0
      interval: 8.0
      range_r: 4.0
    normalization:
      mean: [0.50625, 0.52283, 0.41453]
      std: [0.21669, 0.19807, 0.18691]
    data:
      train_manifest: path/to/manifest.json
      eval_manifest: null
    focal_baseline: 100.0
    output_dir: runs/example
    init_seed: 0

Relative manifest and output paths are resolved against the config file's
directory.  Any key can be overridden on the command line with
``--set section.key=value`` (the value is parsed as YAML).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .data import AugmentConfig, NormalizationStats
from .errors import ConfigurationError
from .metrics import ArdBucketConfig, MetricConfig
from .model import ModelConfig
from .train import TrainConfig

EFFECTIVE_CONFIG_NAME = "effective_config.yaml"


@dataclass(frozen=True)
class DataPaths:
    train_manifest: Optional[str] = None
    eval_manifest: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    buckets: ArdBucketConfig = field(default_factory=ArdBucketConfig)
    normalization: NormalizationStats = field(default_factory=NormalizationStats)
    data: DataPaths = field(default_factory=DataPaths)
    focal_baseline: float = 100.0
    output_dir: str = "runs/default"
    init_seed: int = 0

    def __post_init__(self):
        if self.focal_baseline <= 0:
            raise ConfigurationError(f"focal_baseline must be positive, got {self.focal_baseline}")

    def to_dict(self) -> dict:
        train = dataclasses.asdict(self.train)
        augment = train.pop("augment")
        return {
            "model": dataclasses.asdict(self.model),
            "train": train,
            "augment": augment,
            "metrics": {**dataclasses.asdict(self.metrics), "thresholds": list(self.metrics.thresholds)},
            "buckets": dataclasses.asdict(self.buckets),
            "normalization": {"mean": list(self.normalization.mean), "std": list(self.normalization.std)},
            "data": dataclasses.asdict(self.data),
            "focal_baseline": self.focal_baseline,
            "output_dir": self.output_dir,
            "init_seed": self.init_seed,
        }


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "augment": AugmentConfig,
    "metrics": MetricConfig,
    "buckets": ArdBucketConfig,
    "normalization": NormalizationStats,
    "data": DataPaths,
}
_SCALARS = {"focal_baseline", "output_dir", "init_seed"}


def _section_keys(name: str) -> set:
    keys = {f.name for f in dataclasses.fields(_SECTIONS[name])}
    return keys - {"augment"} if name == "train" else keys


def _check_keys(doc: dict) -> None:
    for key, value in doc.items():
        if key in _SCALARS:
            continue
        if key not in _SECTIONS:
            raise ConfigurationError(f"unknown config key {key!r}")
        if not isinstance(value, dict):
            raise ConfigurationError(f"config section {key!r} must be a mapping")
        unknown = set(value) - _section_keys(key)
        if unknown:
            raise ConfigurationError(f"unknown key(s) in section {key!r}: {', '.join(sorted(unknown))}")


def apply_override(doc: dict, assignment: str) -> None:
    """Apply one ``section.key=value`` (or ``key=value`` for top-level scalars) in place."""
    target, sep, raw = assignment.partition("=")
    if not sep or not target:
        raise ConfigurationError(f"override {assignment!r} must look like section.key=value")
    value = yaml.safe_load(raw) if raw else None
    parts = target.split(".")
    if len(parts) == 1:
        doc[parts[0]] = value
    elif len(parts) == 2:
        section = doc.setdefault(parts[0], {})
        if not isinstance(section, dict):
            raise ConfigurationError(f"config section {parts[0]!r} must be a mapping")
        section[parts[1]] = value
    else:
        raise ConfigurationError(f"override key {target!r} is nested too deeply")


def run_config_from_dict(doc: dict, base_dir: Optional[Path] = None) -> RunConfig:
    doc = dict(doc or {})
    _check_keys(doc)
    base_dir = Path(base_dir) if base_dir is not None else None

    def resolve(p):
        if p is None or base_dir is None or Path(p).is_absolute():
            return p
        return str((base_dir / p).resolve())

    try:
        augment = AugmentConfig(**doc.get("augment", {}))
        train = TrainConfig(**doc.get("train", {}), augment=augment)
        metrics_doc = dict(doc.get("metrics", {}))
        if "thresholds" in metrics_doc:
            metrics_doc["thresholds"] = tuple(metrics_doc["thresholds"])
        norm_doc = {k: tuple(v) for k, v in doc.get("normalization", {}).items()}
        data_doc = {k: resolve(v) for k, v in doc.get("data", {}).items()}
        kwargs = {k: doc[k] for k in _SCALARS if k in doc}
        if "output_dir" in kwargs:
            kwargs["output_dir"] = resolve(kwargs["output_dir"])
        return RunConfig(
            model=ModelConfig(**doc.get("model", {})),
            train=train,
            metrics=MetricConfig(**metrics_doc),
            buckets=ArdBucketConfig(**doc.get("buckets", {})),
            normalization=NormalizationStats(**norm_doc),
            data=DataPaths(**data_doc),
            **kwargs,
        )
    except TypeError as exc:
        raise ConfigurationError(f"invalid config value: {exc}") from exc


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Read a config file (or start from defaults) and apply ``--set`` overrides."""
    doc, base = {}, None
    if path is not None:
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigurationError(f"config {path} must be a mapping at top level")
        base = path.parent
    for assignment in overrides:
        apply_override(doc, assignment)
    return run_config_from_dict(doc, base)


def dump_run_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=True)


def write_effective_config(config: RunConfig, out_dir) -> Path:
    out = Path(out_dir) / EFFECTIVE_CONFIG_NAME
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    tmp.write_text(dump_run_config(config))
    tmp.replace(out)
    return out
