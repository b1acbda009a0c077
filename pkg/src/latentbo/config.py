"""Run configuration: one JSON document driving every pipeline stage.

All randomness flows from the single global seed through named sub-seeds
(trajectory generation / VAE init / VAE training / optimization loop /
objective), so each stage is independently reproducible and a resolved
config pins the exact derived seeds.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .acquisition import AcquisitionConfig, AcquisitionKind
from .errors import InvalidSpecError
from .gp import GpFitConfig
from .loop import BoConfig
from .trajectory import Family, FamilySpec, Trajectory, generate
from .vae import TvaeConfig

# Sub-seed tags (second entry of the SeedSequence key).
TAG_GEN = 11
TAG_TVAE_INIT = 12
TAG_TVAE_TRAIN = 13
TAG_BO = 14
TAG_OBJECTIVE = 15


class ConfigError(InvalidSpecError):
    """Malformed or inconsistent run configuration (a usage error)."""


def derive_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1, np.uint64)[0])


@dataclass
class FamilyBlock:
    """One config entry expanding to `count` per-member FamilySpecs."""

    family: Family
    count: int
    fields: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    seed: int
    n_epochs: int
    value_range: tuple[float, float]
    family_blocks: list[FamilyBlock]
    rescale: bool
    tvae: dict
    bo: dict
    objective: dict
    raw: dict

    @property
    def gen_seed(self) -> int:
        return derive_seed(self.seed, TAG_GEN)

    @property
    def tvae_init_seed(self) -> int:
        return derive_seed(self.seed, TAG_TVAE_INIT)

    @property
    def tvae_train_seed(self) -> int:
        return derive_seed(self.seed, TAG_TVAE_TRAIN)

    @property
    def bo_seed(self) -> int:
        return derive_seed(self.seed, TAG_BO)

    @property
    def objective_seed(self) -> int:
        return derive_seed(self.seed, TAG_OBJECTIVE)


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing required key '{key}' in {where}")
    return d[key]


def parse_config(doc: dict, seed_override: int | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    seed = int(doc.get("seed", 0)) if seed_override is None else int(seed_override)
    n_epochs = int(_require(doc, "n_epochs", "config"))
    if n_epochs < 2:
        raise ConfigError(f"n_epochs must be >= 2, got {n_epochs}")
    traj = doc.get("trajectories", {})
    vr = traj.get("value_range", [0.05, 5.0])
    value_range = (float(vr[0]), float(vr[1]))
    if not (value_range[0] > 0 and value_range[1] > value_range[0]):
        raise ConfigError(f"value_range must satisfy 0 < lo < hi, got {value_range}")
    blocks = []
    for i, b in enumerate(_require(traj, "families", "trajectories")):
        try:
            fam = Family(b["family"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"families[{i}]: unknown or missing family: {exc}") from exc
        count = int(b.get("count", 1))
        if count < 1:
            raise ConfigError(f"families[{i}]: count must be >= 1")
        extra = {k: v for k, v in b.items() if k not in ("family", "count")}
        blocks.append(FamilyBlock(family=fam, count=count, fields=extra))
    if not blocks:
        raise ConfigError("at least one trajectory family is required")

    tvae = dict(doc.get("tvae", {}))
    bo = dict(doc.get("bo", {}))
    objective = dict(doc.get("objective", {"kind": "synthetic_smoothness"}))
    kind = objective.get("kind")
    if kind not in ("synthetic_target", "synthetic_smoothness", "external"):
        raise ConfigError(f"unsupported objective kind in config: {kind!r}")
    cfg = RunConfig(
        seed=seed, n_epochs=n_epochs, value_range=value_range, family_blocks=blocks,
        rescale=bool(traj.get("rescale", True)), tvae=tvae, bo=bo, objective=objective,
        raw=doc,
    )
    # Cross-field consistency checks up front.
    build_tvae_config(cfg)
    build_bo_config(cfg)
    if kind == "synthetic_target":
        resolve_target(cfg)
    return cfg


def load_config(path, seed_override: int | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(doc, seed_override)


def expand_family_specs(cfg: RunConfig) -> list[FamilySpec]:
    """Per-member specs with derived seeds; unset stochastic-family fields
    (period, amplitude, phase) are drawn per member from the member seed."""
    specs = []
    member = 0
    lo, hi = cfg.value_range
    offset = 0.5 * (lo + hi)
    for block in cfg.family_blocks:
        for _ in range(block.count):
            seed = derive_seed(cfg.seed, TAG_GEN, member)
            rng = np.random.default_rng(seed)
            f = dict(block.fields)
            if block.family is Family.PERIODIC:
                f.setdefault("period", float(rng.uniform(0.1, 0.5) * cfg.n_epochs))
                f.setdefault("amplitude", float(rng.uniform(0.3, 1.0) * (offset - lo)))
                f.setdefault("phase", float(rng.uniform(0.0, 2.0 * math.pi)))
            spec = FamilySpec(
                family=block.family,
                n_epochs=cfg.n_epochs,
                value_range=cfg.value_range,
                segments=int(f.get("segments", 4)),
                noise_sd=float(f.get("noise_sd", 0.0)),
                period=float(f.get("period", 20.0)),
                amplitude=float(f.get("amplitude", 1.0)),
                phase=float(f.get("phase", 0.0)),
                seed=seed,
            )
            spec.validate()
            specs.append(spec)
            member += 1
    return specs


def build_tvae_config(cfg: RunConfig) -> TvaeConfig:
    t = cfg.tvae
    if "input_dim" in t and int(t["input_dim"]) != cfg.n_epochs:
        raise ConfigError(
            f"tvae.input_dim ({t['input_dim']}) must equal n_epochs ({cfg.n_epochs})"
        )
    return TvaeConfig(
        input_dim=cfg.n_epochs,
        hidden_sizes=tuple(int(h) for h in t.get("hidden_sizes", (64, 64))),
        decoder_sigma=float(t.get("decoder_sigma", 0.3)),
        learning_rate=float(t.get("learning_rate", 1e-3)),
        epochs=int(t.get("epochs", 1000)),
        batch_size=None if t.get("batch_size") is None else int(t["batch_size"]),
        seed=cfg.tvae_train_seed,
    )


def build_bo_config(cfg: RunConfig) -> BoConfig:
    b = cfg.bo
    acq = b.get("acquisition", {})
    try:
        kind = AcquisitionKind(acq.get("kind", "ei"))
    except ValueError as exc:
        raise ConfigError(f"unknown acquisition kind {acq.get('kind')!r}") from exc
    gp = b.get("gp", {})
    grid = b.get("grid_shape", [60, 60])
    return BoConfig(
        init_samples=int(b.get("init_samples", 20)),
        max_iters=int(b.get("max_iters", 120)),
        acquisition=AcquisitionConfig(
            kind=kind, xi=float(acq.get("xi", 0.0)), kappa=float(acq.get("kappa", 2.0)),
        ),
        convergence_eps=float(b.get("convergence_eps", 1e-6)),
        seed=cfg.bo_seed,
        grid_shape=(int(grid[0]), int(grid[1])),
        bound_padding=float(b.get("bound_padding", 0.2)),
        gp_fit=GpFitConfig(
            learning_rate=float(gp.get("learning_rate", 1e-4)),
            steps=int(gp.get("steps", 30000)),
            restarts=int(gp.get("restarts", 3)),
            seed=cfg.bo_seed,
        ),
        gp_refit_steps=int(b.get("gp", {}).get("refit_steps", 2000)),
    )


def resolve_target(cfg: RunConfig) -> Trajectory:
    """Target trajectory for the synthetic-target objective: inline values
    or a family spec generated with the objective sub-seed."""
    target = cfg.objective.get("target")
    if not isinstance(target, dict):
        raise ConfigError("synthetic_target objective needs a 'target' object")
    if "values" in target:
        values = np.asarray(target["values"], dtype=np.float64)
        if values.shape != (cfg.n_epochs,):
            raise ConfigError(
                f"target has {values.shape[0] if values.ndim == 1 else '?'} values, "
                f"expected n_epochs={cfg.n_epochs}"
            )
        return Trajectory(values)
    if "family" in target:
        block = target["family"]
        try:
            fam = Family(block["family"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"target.family: {exc}") from exc
        spec = FamilySpec(
            family=fam,
            n_epochs=cfg.n_epochs,
            value_range=cfg.value_range,
            segments=int(block.get("segments", 4)),
            noise_sd=float(block.get("noise_sd", 0.0)),
            period=float(block.get("period", 20.0)),
            amplitude=float(block.get("amplitude", 1.0)),
            phase=float(block.get("phase", 0.0)),
            seed=cfg.objective_seed,
        )
        spec.validate()
        return generate(spec)
    raise ConfigError("target must contain 'values' or 'family'")


def resolved_dict(cfg: RunConfig) -> dict:
    """Fully resolved config (derived seeds pinned) for the run directory."""
    doc = json.loads(json.dumps(cfg.raw))  # deep copy
    doc["seed"] = cfg.seed
    doc["derived_seeds"] = {
        "gen": cfg.gen_seed,
        "tvae_init": cfg.tvae_init_seed,
        "tvae_train": cfg.tvae_train_seed,
        "bo": cfg.bo_seed,
        "objective": cfg.objective_seed,
    }
    if cfg.objective.get("kind") == "synthetic_target":
        doc.setdefault("objective", {})
        doc["objective"]["target"] = {
            "values": [float(v) for v in resolve_target(cfg).values]
        }
    return doc


def save_resolved(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(resolved_dict(cfg), fh, indent=2, sort_keys=True)


def paths_for(out_dir: str) -> dict:
    return {
        "trajectories": os.path.join(out_dir, "trajectories.csv"),
        "provenance": os.path.join(out_dir, "provenance.json"),
        "checkpoint": os.path.join(out_dir, "tvae_checkpoint.json"),
        "loss_history": os.path.join(out_dir, "tvae_loss.csv"),
        "config": os.path.join(out_dir, "config.json"),
    }
