"""Run configuration: model + training + data source + outputs, stored as JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .data import default_labels
from .errors import ConfigError
from .model import ModelConfig, StageConfig, desk_config, micro_config
from .train import TrainConfig


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 2
    train_per_class: int = 100
    val_per_class: int = 50
    size: int = 64

    def __post_init__(self):
        if self.classes not in (2, 8):
            raise ConfigError(f"synthetic data supports 2 or 8 classes, got {self.classes}")
        if self.train_per_class < 1 or self.val_per_class < 0 or self.size < 1:
            raise ConfigError("synthetic sample counts and size must be positive")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig = field(default_factory=TrainConfig)
    manifest: str | None = None
    synth: SynthSpec | None = None
    out_dir: str = "runs/default"
    seeds: tuple[int, ...] = (0,)
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if (self.manifest is None) == (self.synth is None):
            raise ConfigError("exactly one data source (manifest or synth) must be configured")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.labels is None:
            object.__setattr__(self, "labels", default_labels(self.model.num_classes))
        else:
            object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) != self.model.num_classes:
            raise ConfigError(
                f"{len(self.labels)} labels {list(self.labels)} but the model head has {self.model.num_classes} classes"
            )
        if self.synth is not None:
            if self.synth.classes != self.model.num_classes:
                raise ConfigError(f"synthetic data has {self.synth.classes} classes, model has {self.model.num_classes}")
            if self.model.input_shape != (3, self.synth.size, self.synth.size):
                raise ConfigError(
                    f"synthetic images are (3, {self.synth.size}, {self.synth.size}) but model expects {self.model.input_shape}"
                )

    def to_dict(self) -> dict:
        d = {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "out_dir": self.out_dir,
            "seeds": list(self.seeds),
            "labels": list(self.labels),
        }
        if self.manifest is not None:
            d["manifest"] = self.manifest
        if self.synth is not None:
            d["synth"] = {
                "classes": self.synth.classes,
                "train_per_class": self.synth.train_per_class,
                "val_per_class": self.synth.val_per_class,
                "size": self.synth.size,
            }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        try:
            model = ModelConfig.from_dict(d.get("model", {}))
            train = TrainConfig.from_dict(d.get("train", {}))
            synth = SynthSpec(**d["synth"]) if d.get("synth") is not None else None
        except TypeError as e:
            raise ConfigError(str(e)) from e
        manifest = d.get("manifest")
        if manifest is not None and base_dir is not None and not Path(manifest).is_absolute():
            manifest = str(base_dir / manifest)
        return cls(
            model=model,
            train=train,
            manifest=manifest,
            synth=synth,
            out_dir=d.get("out_dir", "runs/default"),
            seeds=tuple(d.get("seeds", (0,))),
            labels=tuple(d["labels"]) if d.get("labels") else None,
        )

    def for_seed(self, seed: int) -> "RunConfig":
        return replace(self, seeds=(seed,), train=replace(self.train, seed=seed))


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return RunConfig.from_dict(raw, base_dir=path.parent)


def preset(name: str) -> RunConfig:
    """Built-in run configurations."""
    if name == "quick":
        return RunConfig(
            model=micro_config(),
            # small enough to memorize its training set in about a second
            train=TrainConfig(epochs=60, batch_size=16, lr=1e-2, weight_decay=0.01, use_augmentation=False),
            synth=SynthSpec(classes=2, train_per_class=8, val_per_class=8, size=16),
            out_dir="runs/quick",
        )
    if name == "desk":
        return RunConfig(
            model=desk_config(),
            train=TrainConfig(epochs=30, batch_size=32, lr=1e-3, weight_decay=0.01, target_val_accuracy=0.95),
            synth=SynthSpec(classes=2, train_per_class=100, val_per_class=50, size=64),
            out_dir="runs/desk",
            seeds=(0, 1, 2),
        )
    if name == "desk-multiclass":
        return RunConfig(
            model=desk_config(num_classes=8),
            train=TrainConfig(epochs=30, batch_size=32, lr=1e-3, weight_decay=0.01),
            synth=SynthSpec(classes=8, train_per_class=50, val_per_class=25, size=64),
            out_dir="runs/desk-multiclass",
        )
    if name == "breakhis":
        return RunConfig(
            model=ModelConfig(num_classes=2),
            train=TrainConfig(),
            manifest="manifest.csv",
            out_dir="runs/breakhis",
            seeds=(0, 1, 2, 3, 4),
        )
    raise ConfigError(f"unknown preset {name!r}; choose from quick, desk, desk-multiclass, breakhis")


PRESETS = ("quick", "desk", "desk-multiclass", "breakhis")

__all__ = ["RunConfig", "SynthSpec", "StageConfig", "load_run_config", "preset", "PRESETS"]
