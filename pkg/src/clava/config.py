"""Run configuration: JSON file plus command-line overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .diffusion import DiffusionConfig
from .guidance import ClassifierConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data_dir: str | None = None
    model_dir: str | None = None
    out_dir: str | None = None
    # clustering
    k_clusters: int | dict = 20
    parent_scale: float = 1.0
    # sampling
    classifier_scale: float = 1.0
    scale: float = 1.0
    seed: int = 0
    sample_seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    # diffusion
    timesteps: int = 2000
    beta_min: float | None = None
    beta_max: float | None = None
    iterations: int = 5000
    lr: float = 6e-4
    batch_size: int = 256
    layers: list[int] = field(default_factory=lambda: [128, 256, 256, 128])
    weight_decay: float = 1e-4
    # classifier
    classifier_iterations: int | None = None
    classifier_lr: float = 1e-4
    classifier_layers: list[int] = field(default_factory=lambda: [128, 256, 128])
    # extras
    singlet: bool = False
    dcr: bool = False
    threads: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ks = self.k_clusters.values() if isinstance(self.k_clusters, dict) else [self.k_clusters]
        if any(int(k) < 1 for k in ks):
            raise ConfigError("k_clusters must be >= 1")
        if self.parent_scale < 0:
            raise ConfigError("parent_scale must be >= 0")
        if self.classifier_scale < 0:
            raise ConfigError("classifier_scale must be >= 0")
        if self.scale < 0:
            raise ConfigError("scale must be >= 0")
        if self.timesteps < 1:
            raise ConfigError("timesteps must be >= 1")
        if self.iterations < 0 or (self.classifier_iterations or 0) < 0:
            raise ConfigError("iterations must be >= 0")
        paths = [Path(p).resolve() for p in (self.data_dir, self.model_dir, self.out_dir) if p]
        if len(set(paths)) != len(paths):
            raise ConfigError("data_dir, model_dir and out_dir must be distinct")

    def diffusion_config(self, seed: int) -> DiffusionConfig:
        return DiffusionConfig(
            iterations=self.iterations, lr=self.lr, batch_size=self.batch_size,
            layers=tuple(self.layers), weight_decay=self.weight_decay, seed=seed,
        )

    def classifier_config(self, seed: int) -> ClassifierConfig:
        iters = self.iterations if self.classifier_iterations is None else self.classifier_iterations
        return ClassifierConfig(
            iterations=iters, lr=self.classifier_lr, batch_size=self.batch_size,
            layers=tuple(self.classifier_layers), weight_decay=self.weight_decay, seed=seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)
