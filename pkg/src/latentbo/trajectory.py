"""Generation, validation and scaling of KL scale-factor trajectories.

A trajectory is a length-N schedule of per-training-cycle scale factors.
Three generator families are provided (linear cooldown, segmented random,
periodic); sets of trajectories serve as training data for the small
trajectory VAE and as the decoded search objects of the optimization loop.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRangeError, InvalidSpecError, ShapeError


class Family(enum.Enum):
    LINEAR_COOLDOWN = "linear_cooldown"
    SEGMENTED_RANDOM = "segmented_random"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class Trajectory:
    """Positive schedule of scale factors, one value per training cycle."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ShapeError(f"trajectory must be a non-empty 1D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidSpecError("trajectory values must all be finite")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def n_epochs(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class FamilySpec:
    """Parameters for one generated trajectory.

    `value_range` bounds the generated levels; family-specific fields are
    ignored by the other families. `phase` is in radians, `period` in
    epochs. Periodic trajectories oscillate around the midpoint of
    `value_range`.
    """

    family: Family
    n_epochs: int
    value_range: tuple[float, float] = (0.05, 5.0)
    segments: int = 4
    noise_sd: float = 0.0
    period: float = 20.0
    amplitude: float = 1.0
    phase: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.value_range
        if self.n_epochs < 2:
            raise InvalidSpecError(f"n_epochs must be >= 2, got {self.n_epochs}")
        if not (lo > 0 and hi >= lo):
            raise InvalidSpecError(f"value_range must satisfy 0 < lo <= hi, got {self.value_range}")
        if self.family is Family.SEGMENTED_RANDOM:
            if self.segments < 1:
                raise InvalidSpecError(f"segments must be >= 1, got {self.segments}")
            if self.segments > self.n_epochs:
                raise InvalidSpecError(
                    f"segments ({self.segments}) cannot exceed n_epochs ({self.n_epochs})"
                )
            if self.noise_sd < 0:
                raise InvalidSpecError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if self.family is Family.PERIODIC:
            if self.period < 2:
                raise InvalidSpecError(f"period must be >= 2, got {self.period}")
            offset = 0.5 * (lo + hi)
            if self.amplitude >= offset:
                raise InvalidSpecError(
                    f"amplitude ({self.amplitude}) must be < midpoint offset ({offset}) "
                    "to keep values positive"
                )
            if self.amplitude < 0:
                raise InvalidSpecError(f"amplitude must be >= 0, got {self.amplitude}")


@dataclass(frozen=True)
class TrajectorySet:
    """Uniform-length trajectories plus the specs that produced them."""

    trajectories: list[Trajectory]
    provenance: list[FamilySpec] = field(default_factory=list)

    def __post_init__(self):
        if not self.trajectories:
            raise InvalidSpecError("trajectory set must be non-empty")
        n = self.trajectories[0].n_epochs
        if any(t.n_epochs != n for t in self.trajectories):
            raise ShapeError("all trajectories in a set must share n_epochs")

    @property
    def n_epochs(self) -> int:
        return self.trajectories[0].n_epochs

    def as_matrix(self) -> np.ndarray:
        """(n_trajectories, n_epochs) float64 matrix of values."""
        return np.stack([t.values for t in self.trajectories])


def gen_linear_cooldown(n_epochs: int, start: float, end: float, seed: int = 0) -> Trajectory:
    """Linear schedule from `start` to `end` inclusive.

    Monotone non-increasing when start >= end. `seed` is accepted for
    interface uniformity with the stochastic families; the output does not
    depend on it.
    """
    if n_epochs < 2:
        raise InvalidSpecError(f"n_epochs must be >= 2, got {n_epochs}")
    if start <= 0 or end <= 0:
        raise InvalidSpecError(f"endpoints must be positive, got start={start}, end={end}")
    return Trajectory(np.linspace(start, end, n_epochs))


def gen_segmented_random(spec: FamilySpec) -> Trajectory:
    """Piecewise-constant random levels with optional additive Gaussian noise.

    The epochs are split into `segments` near-equal contiguous blocks
    (remainder epochs go to the earliest blocks); each block level is drawn
    uniformly from `value_range`. Post-noise values are clamped to lo/2 so
    the result stays strictly positive.
    """
    spec.validate()
    lo, hi = spec.value_range
    rng = np.random.default_rng(spec.seed)
    base, rem = divmod(spec.n_epochs, spec.segments)
    sizes = [base + 1] * rem + [base] * (spec.segments - rem)
    levels = rng.uniform(lo, hi, size=spec.segments)
    values = np.repeat(levels, sizes)
    if spec.noise_sd > 0:
        values = values + rng.normal(0.0, spec.noise_sd, size=spec.n_epochs)
    values = np.maximum(values, lo / 2.0)
    return Trajectory(values)


def gen_periodic(spec: FamilySpec) -> Trajectory:
    """Sinusoid around the midpoint of `value_range`.

    values[i] = offset + amplitude * sin(2*pi*i/period + phase) with
    offset = (lo + hi) / 2; amplitude < offset keeps every value positive.
    """
    spec.validate()
    lo, hi = spec.value_range
    offset = 0.5 * (lo + hi)
    i = np.arange(spec.n_epochs, dtype=np.float64)
    values = offset + spec.amplitude * np.sin(2.0 * math.pi * i / spec.period + spec.phase)
    return Trajectory(values)


def generate(spec: FamilySpec) -> Trajectory:
    """Dispatch to the family generator named in the spec.

    For LINEAR_COOLDOWN the endpoints are drawn from the spec seed: start
    uniform in [midpoint, hi], end uniform in [lo, midpoint].
    """
    spec.validate()
    if spec.family is Family.LINEAR_COOLDOWN:
        lo, hi = spec.value_range
        mid = 0.5 * (lo + hi)
        rng = np.random.default_rng(spec.seed)
        start = rng.uniform(mid, hi)
        end = rng.uniform(lo, mid)
        return gen_linear_cooldown(spec.n_epochs, start, end, spec.seed)
    if spec.family is Family.SEGMENTED_RANDOM:
        return gen_segmented_random(spec)
    if spec.family is Family.PERIODIC:
        return gen_periodic(spec)
    raise InvalidSpecError(f"unknown family {spec.family!r}")


def is_feasible(t: Trajectory) -> bool:
    """True iff every value is strictly positive."""
    return bool(np.all(t.values > 0.0))


def rescale_set(tset: TrajectorySet, target_range: tuple[float, float]) -> TrajectorySet:
    """Affine min-max rescale of the whole set onto `target_range`.

    The map is computed from the global min/max over all member values and
    applied uniformly, so relative structure between trajectories is kept:
    global min -> lo, global max -> hi.
    """
    lo, hi = target_range
    if not (lo > 0 and hi > lo):
        raise InvalidSpecError(f"target range must satisfy 0 < lo < hi, got {target_range}")
    mat = tset.as_matrix()
    gmin, gmax = float(mat.min()), float(mat.max())
    if gmax == gmin:
        raise DegenerateRangeError("cannot rescale a set whose values are all equal")
    scale = (hi - lo) / (gmax - gmin)
    rescaled = [Trajectory((t.values - gmin) * scale + lo) for t in tset.trajectories]
    return TrajectorySet(rescaled, list(tset.provenance))


# ---------------------------------------------------------------------------
# Serialization. CSV rows and JSON arrays print floats with 17 significant
# digits, which round-trips IEEE doubles exactly.


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_set_csv(tset: TrajectorySet, path) -> None:
    n = tset.n_epochs
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"e{i}" for i in range(n)])
        for t in tset.trajectories:
            writer.writerow([_fmt(v) for v in t.values])


def load_set_csv(path) -> TrajectorySet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "e0":
            raise ShapeError(f"unexpected trajectory CSV header: {header[:3]}...")
        rows = [Trajectory(np.array([float(v) for v in row])) for row in reader if row]
    return TrajectorySet(rows)


def save_set_json(tset: TrajectorySet, path) -> None:
    arrays = [[float(v) for v in t.values] for t in tset.trajectories]
    with open(path, "w") as fh:
        json.dump(arrays, fh)


def load_set_json(path) -> TrajectorySet:
    with open(path) as fh:
        arrays = json.load(fh)
    return TrajectorySet([Trajectory(np.array(a, dtype=np.float64)) for a in arrays])


def spec_to_dict(spec: FamilySpec) -> dict:
    return {
        "family": spec.family.value,
        "n_epochs": spec.n_epochs,
        "value_range": [spec.value_range[0], spec.value_range[1]],
        "segments": spec.segments,
        "noise_sd": spec.noise_sd,
        "period": spec.period,
        "amplitude": spec.amplitude,
        "phase": spec.phase,
        "seed": spec.seed,
    }


def spec_from_dict(d: dict) -> FamilySpec:
    return FamilySpec(
        family=Family(d["family"]),
        n_epochs=int(d["n_epochs"]),
        value_range=(float(d["value_range"][0]), float(d["value_range"][1])),
        segments=int(d.get("segments", 4)),
        noise_sd=float(d.get("noise_sd", 0.0)),
        period=float(d.get("period", 20.0)),
        amplitude=float(d.get("amplitude", 1.0)),
        phase=float(d.get("phase", 0.0)),
        seed=int(d.get("seed", 0)),
    )

