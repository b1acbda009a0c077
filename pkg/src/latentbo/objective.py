"""Objectives over decoded trajectories.

The production objective scores how well a trained downstream model
separates its discrete classes: per-class latent-manifold image grids are
compared with SSIM, maximizing dissimilarity between classes and
(optionally) similarity within each class. Two cheap synthetic objectives
with brute-force oracles are provided for desk-scale testing, plus a
dispatcher that can call an external training worker over the NDJSON wire
protocol.

"SSIM loss" throughout means 1 - SSIM, so larger loss = more dissimilar.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    EvaluationFailedError,
    InsufficientCellsError,
    InvalidSpecError,
    ShapeError,
)
from .trajectory import Trajectory, is_feasible

# ---------------------------------------------------------------------------
# SSIM


@dataclass(frozen=True)
class SsimConfig:
    """Standard SSIM settings: Gaussian window, k1/k2 stability constants,
    and the declared pixel dynamic range L."""

    window: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise InvalidSpecError(f"window must be odd and positive, got {self.window}")
        if self.k1 <= 0 or self.k2 <= 0:
            raise InvalidSpecError("k1 and k2 must be positive")
        if self.dynamic_range <= 0:
            raise InvalidSpecError("dynamic_range must be positive")


def fitted_window(window: int, min_dim: int) -> int:
    """Largest odd window <= min(window, min_dim)."""
    w = min(window, min_dim)
    if w % 2 == 0:
        w -= 1
    if w < 1:
        raise ShapeError(f"images of min dimension {min_dim} cannot host any SSIM window")
    return w


def config_for_images(min_dim: int, dynamic_range: float) -> SsimConfig:
    return SsimConfig(window=fitted_window(11, min_dim), dynamic_range=dynamic_range)


def gaussian_window(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    coords = np.arange(window) - half
    g1 = np.exp(-0.5 * (coords / sigma) ** 2)
    w = np.outer(g1, g1)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray, config: SsimConfig) -> float:
    """Mean structural similarity over all valid sliding-window positions.

    Symmetric, in [-1, 1], and exactly 1.0 for identical images: every
    windowed statistic is computed through the same expression for both
    inputs, so a == b makes numerator and denominator bit-identical.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"images must be equal-shape 2D arrays, got {a.shape} vs {b.shape}")
    win = config.window
    if win > min(a.shape):
        raise ShapeError(f"window {win} does not fit images of shape {a.shape}")
    w = gaussian_window(win, config.window_sigma)
    c1 = (config.k1 * config.dynamic_range) ** 2
    c2 = (config.k2 * config.dynamic_range) ** 2

    wa = sliding_window_view(a, (win, win))
    wb = sliding_window_view(b, (win, win))
    mu_a = np.einsum("ijkl,kl->ij", wa, w)
    mu_b = np.einsum("ijkl,kl->ij", wb, w)
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = np.einsum("ijkl,kl->ij", da * da, w)
    var_b = np.einsum("ijkl,kl->ij", db * db, w)
    cov = np.einsum("ijkl,kl->ij", da * db, w)

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# Manifold grids and the class-separation losses


@dataclass(frozen=True)
class ManifoldGrid:
    """Grid of images decoded from a latent traversal, one grid per class.

    `cells` has shape (rows, cols, h, w); pixels lie in [0, dynamic_range].
    """

    class_id: int
    cells: np.ndarray
    dynamic_range: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.cells, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeError(f"cells must have shape (rows, cols, h, w), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidSpecError("manifold pixels must all be finite")
        if self.class_id < 0:
            raise InvalidSpecError(f"class_id must be >= 0, got {self.class_id}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "cells", arr)

    @property
    def rows(self) -> int:
        return self.cells.shape[0]

    @property
    def cols(self) -> int:
        return self.cells.shape[1]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.cells.shape[2], self.cells.shape[3]

    def cell(self, row: int, col: int) -> np.ndarray:
        return self.cells[row, col]


def _check_uniform(manifolds: list[ManifoldGrid]) -> None:
    ref = manifolds[0].cells.shape
    for m in manifolds[1:]:
        if m.cells.shape != ref:
            raise ShapeError(f"manifold shapes differ: {ref} vs {m.cells.shape}")


def _default_config(manifolds: list[ManifoldGrid]) -> SsimConfig:
    h, w = manifolds[0].image_shape
    return config_for_images(min(h, w), manifolds[0].dynamic_range)


def between_class_loss(manifolds: list[ManifoldGrid], config: SsimConfig | None = None) -> float:
    """Sum over unordered class pairs of the mean cell-aligned SSIM loss.

    Cells are compared at identical grid coordinates; with D classes there
    are C(D, 2) pair terms.
    """
    if len(manifolds) < 2:
        raise InvalidSpecError("between-class loss needs at least two manifolds")
    _check_uniform(manifolds)
    cfg = config or _default_config(manifolds)
    total = 0.0
    for i in range(len(manifolds)):
        for j in range(i + 1, len(manifolds)):
            a, b = manifolds[i], manifolds[j]
            losses = [
                1.0 - ssim(a.cell(r, c), b.cell(r, c), cfg)
                for r in range(a.rows) for c in range(a.cols)
            ]
            total += float(np.mean(losses))
    return total


def _unrank_pair(p: int, n: int) -> tuple[int, int]:
    """p-th pair (i, j), i < j, in lexicographic order over n items."""
    i = 0
    row = n - 1
    while p >= row:
        p -= row
        i += 1
        row -= 1
    return i, i + 1 + p


def within_class_loss(manifold: ManifoldGrid, pairs: int, rng: np.random.Generator,
                      config: SsimConfig | None = None) -> float:
    """Mean SSIM loss over `pairs` distinct random cell pairs of one manifold.

    Sampling is without replacement, capped at the number of unique pairs;
    this avoids scoring every combination, which grows quadratically in
    grid size.
    """
    n_cells = manifold.rows * manifold.cols
    if n_cells < 2:
        raise InsufficientCellsError("within-class loss needs at least two cells")
    if pairs < 1:
        raise InvalidSpecError(f"pair count must be >= 1, got {pairs}")
    cfg = config or _default_config([manifold])
    n_pairs_total = n_cells * (n_cells - 1) // 2
    take = min(pairs, n_pairs_total)
    chosen = rng.choice(n_pairs_total, size=take, replace=False)
    losses = []
    for p in chosen:
        ia, ib = _unrank_pair(int(p), n_cells)
        ra, ca = divmod(ia, manifold.cols)
        rb, cb = divmod(ib, manifold.cols)
        losses.append(1.0 - ssim(manifold.cell(ra, ca), manifold.cell(rb, cb), cfg))
    return float(np.mean(losses))


def classification_objective(manifolds: list[ManifoldGrid], pairs: int, seed: int,
                             include_within: bool = True,
                             config: SsimConfig | None = None) -> float:
    """Between-class loss minus the summed within-class losses (maximization).

    Per-class pair sampling streams are keyed on (seed, class_id), not on
    list position, so the value is invariant to permuting the input order.
    With include_within=False only the between-class part is returned (the
    simplification used when class interiors are already tight).
    """
    l1 = between_class_loss(manifolds, config)
    if not include_within:
        return l1
    cfg = config or _default_config(manifolds)
    l2 = 0.0
    for m in manifolds:
        rng = np.random.default_rng(np.random.SeedSequence([seed, m.class_id]))
        l2 += within_class_loss(m, pairs, rng, cfg)
    return l1 - l2


def manifold_to_dict(m: ManifoldGrid) -> dict:
    """Wire-format entry: shape header plus row-major pixels (cells
    row-major, each image row-major)."""
    h, w = m.image_shape
    return {
        "class_id": m.class_id, "rows": m.rows, "cols": m.cols, "h": h, "w": w,
        "pixels": [float(v) for v in m.cells.ravel()],
    }


def manifold_from_dict(d: dict, dynamic_range: float = 1.0) -> ManifoldGrid:
    rows, cols, h, w = int(d["rows"]), int(d["cols"]), int(d["h"]), int(d["w"])
    pixels = np.asarray(d["pixels"], dtype=np.float64)
    if pixels.shape != (rows * cols * h * w,):
        raise ShapeError(
            f"pixel count {pixels.shape} does not match {rows}x{cols}x{h}x{w}"
        )
    return ManifoldGrid(class_id=int(d["class_id"]),
                        cells=pixels.reshape(rows, cols, h, w),
                        dynamic_range=dynamic_range)


def save_manifolds(manifolds: list[ManifoldGrid], path) -> None:
    doc = {
        "dynamic_range": manifolds[0].dynamic_range,
        "manifolds": [manifold_to_dict(m) for m in manifolds],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_manifolds(path) -> list[ManifoldGrid]:
    with open(path) as fh:
        doc = json.load(fh)
    dr = float(doc.get("dynamic_range", 1.0))
    return [manifold_from_dict(d, dr) for d in doc["manifolds"]]


# ---------------------------------------------------------------------------
# Synthetic desk-scale objectives


def synthetic_target_objective(t: Trajectory, target: Trajectory) -> float:
    """Negative RMSE to a fixed target trajectory; maximum 0 at equality."""
    if t.n_epochs != target.n_epochs:
        raise ShapeError(f"length mismatch: {t.n_epochs} vs {target.n_epochs}")
    return -float(np.sqrt(np.mean((t.values - target.values) ** 2)))


def synthetic_smoothness_objective(t: Trajectory) -> float:
    """Negative mean squared consecutive difference; flat schedules score 0."""
    return -float(np.mean(np.diff(t.values) ** 2))


# ---------------------------------------------------------------------------
# Objective specs and dispatch


@dataclass(frozen=True)
class SyntheticTargetSpec:
    target: Trajectory
    kind: str = "synthetic_target"


@dataclass(frozen=True)
class SyntheticSmoothnessSpec:
    kind: str = "synthetic_smoothness"


@dataclass(frozen=True)
class ManifoldSeparationSpec:
    """In-process variant: `provider` maps a trajectory to per-class manifolds."""

    provider: Callable[[Trajectory], list[ManifoldGrid]]
    pairs: int = 10
    seed: int = 0
    include_within: bool = True
    kind: str = "manifold_separation"


@dataclass(frozen=True)
class ExternalSpec:
    """Manifolds fetched from a worker over the NDJSON protocol.

    Exactly one of `command` (subprocess over stdio) or `address`
    ((host, port) TCP) must be set.
    """

    command: tuple[str, ...] | None = None
    address: tuple[str, int] | None = None
    pairs: int = 10
    seed: int = 0
    include_within: bool = True
    timeout_s: float = 600.0
    config_override: dict = field(default_factory=dict)
    kind: str = "external"

    def __post_init__(self):
        if (self.command is None) == (self.address is None):
            raise InvalidSpecError("set exactly one of command or address")


ObjectiveSpec = SyntheticTargetSpec | SyntheticSmoothnessSpec | ManifoldSeparationSpec | ExternalSpec


def score_manifolds(manifolds: list[ManifoldGrid], pairs: int, seed: int,
                    include_within: bool) -> float:
    cfg = _default_config(manifolds)
    return classification_objective(manifolds, pairs, seed, include_within, cfg)


class ObjectiveFn:
    """Callable objective bound to a spec; External keeps one live worker."""

    def __init__(self, spec: ObjectiveSpec):
        self.spec = spec
        self._client = None

    def __call__(self, t: Trajectory) -> float:
        if not is_feasible(t):
            raise InvalidSpecError("objective requires a strictly positive trajectory")
        spec = self.spec
        if isinstance(spec, SyntheticTargetSpec):
            return synthetic_target_objective(t, spec.target)
        if isinstance(spec, SyntheticSmoothnessSpec):
            return synthetic_smoothness_objective(t)
        if isinstance(spec, ManifoldSeparationSpec):
            manifolds = spec.provider(t)
            return score_manifolds(manifolds, spec.pairs, spec.seed, spec.include_within)
        if isinstance(spec, ExternalSpec):
            manifolds = self._external_manifolds(t)
            return score_manifolds(manifolds, spec.pairs, spec.seed, spec.include_within)
        raise InvalidSpecError(f"unknown objective spec {spec!r}")

    def _external_manifolds(self, t: Trajectory) -> list[ManifoldGrid]:
        from .worker_client import WorkerClient

        spec = self.spec
        if self._client is None:
            self._client = WorkerClient.open(command=spec.command, address=spec.address,
                                             timeout_s=spec.timeout_s)
        try:
            return self._client.evaluate(t.values, spec.config_override)
        except EvaluationFailedError:
            self.close()
            raise

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def evaluate(spec: ObjectiveSpec, t: Trajectory) -> float:
    """One-shot dispatch; External specs spawn and tear down a worker per call."""
    with ObjectiveFn(spec) as fn:
        return fn(t)
