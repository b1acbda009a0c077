"""Worker run configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class WorkerConfig:
    """Settings for one training job.

    `cycles` must equal the length of the schedule received with each
    evaluate request; the per-cycle continuous KL scale comes from that
    schedule while the discrete KL scale stays at `beta_d`.
    """

    dataset: str = "digits"          # "digits" or "blobs"
    subset_size: int = 512
    n_classes: int = 3
    beta_d: float = 3.0
    cycles: int = 120
    learning_rate: float = 1e-3
    decoder: str = "bernoulli"       # "bernoulli" or "gaussian"
    decoder_sigma: float = 0.3
    continuous_dim: int = 2
    hidden: int = 64
    batch_size: int = 64
    grid_rows: int = 4
    grid_cols: int = 4
    image_size: int = 8
    traversal_range: float = 2.5
    seed: int = 0

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.cycles < 1:
            raise ValueError(f"cycles must be >= 1, got {self.cycles}")
        if self.dataset not in ("digits", "blobs"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.decoder not in ("bernoulli", "gaussian"):
            raise ValueError(f"unknown decoder {self.decoder!r}")
        if self.subset_size < self.n_classes:
            raise ValueError("subset_size must cover at least one image per class")
        if min(self.grid_rows, self.grid_cols) < 1 or self.image_size < 1:
            raise ValueError("grid and image dimensions must be positive")
        if self.continuous_dim < 2:
            raise ValueError("continuous_dim must be >= 2 for a 2D traversal")


def from_dict(doc: dict) -> WorkerConfig:
    known = {f for f in WorkerConfig.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = WorkerConfig(**doc)
    cfg.validate()
    return cfg


def load(path) -> WorkerConfig:
    with open(path) as fh:
        return from_dict(json.load(fh))


def merged(base: WorkerConfig, override: dict) -> WorkerConfig:
    if not override:
        return base
    known = {f for f in WorkerConfig.__dataclass_fields__}
    unknown = set(override) - known
    if unknown:
        raise ValueError(f"unknown config_override keys: {sorted(unknown)}")
    cfg = replace(base, **override)
    cfg.validate()
    return cfg
