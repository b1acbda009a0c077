"""The latent Bayesian optimization loop.

Builds a feasibility-masked grid over the VAE latent box, seeds the run
with random feasible evaluations, then iterates fit -> predict -> acquire
-> decode -> evaluate -> augment until the budget is spent or the best
acquisition value becomes negligible. Reports both the GP-estimated
optimum (posterior-mean argmax over the feasible grid) and the best
directly evaluated sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .acquisition import AcquisitionConfig, score, select_next
from .errors import (
    EvaluationFailedError,
    InfeasibleSpaceError,
    InsufficientSpaceError,
    InvalidSpecError,
)
from .gp import GpFitConfig, GpModel, fit, predict_batch, refit_config
from .trajectory import Trajectory, TrajectorySet
from .vae import LatentPoint, TvaeModel, decode_grid, encode_means

# Tags for deriving independent, resumable random streams from the run seed.
_TAG_INIT = 1
_TAG_FIT = 2


def _stream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def _subseed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class BoConfig:
    init_samples: int = 20
    max_iters: int = 120
    acquisition: AcquisitionConfig = AcquisitionConfig()
    convergence_eps: float = 1e-6
    seed: int = 0
    grid_shape: tuple[int, int] = (60, 60)
    bound_padding: float = 0.2
    gp_fit: GpFitConfig = GpFitConfig()
    gp_refit_steps: int = 2000

    def __post_init__(self):
        if self.init_samples < 2:
            raise InvalidSpecError(f"init_samples must be >= 2, got {self.init_samples}")
        if self.max_iters < 0:
            raise InvalidSpecError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.convergence_eps < 0:
            raise InvalidSpecError("convergence_eps must be >= 0")
        if min(self.grid_shape) < 2:
            raise InvalidSpecError(f"grid must be at least 2x2, got {self.grid_shape}")


@dataclass
class FeasibleGrid:
    """Latent grid with one decoded trajectory and feasibility bit per cell.

    Cells are ordered row-major: index = i1 * n2 + i2, with z1 along rows.
    """

    bounds: tuple[float, float, float, float]
    shape: tuple[int, int]
    points: np.ndarray     # (n1*n2, 2) cell centers
    mask: np.ndarray       # (n1*n2,) feasibility
    decoded: np.ndarray    # (n1*n2, n_epochs)

    @property
    def n_cells(self) -> int:
        return self.points.shape[0]

    @property
    def n_feasible(self) -> int:
        return int(self.mask.sum())

    def trajectory(self, index: int) -> Trajectory:
        return Trajectory(self.decoded[index])

    def point(self, index: int) -> LatentPoint:
        return LatentPoint(float(self.points[index, 0]), float(self.points[index, 1]))


def build_feasible_grid(model: TvaeModel, train_set: TrajectorySet,
                        config: BoConfig) -> FeasibleGrid:
    """Decode every cell of the padded embedding box and mask feasibility.

    Bounds are the axis-aligned box of the training-set embedding means,
    padded by `bound_padding` of the extent per side. A cell is feasible
    iff its decoded trajectory is strictly positive everywhere.
    """
    emb = encode_means(model, train_set)
    lo, hi = emb.min(axis=0), emb.max(axis=0)
    extent = np.maximum(hi - lo, 1e-9)
    lo = lo - config.bound_padding * extent
    hi = hi + config.bound_padding * extent
    n1, n2 = config.grid_shape
    z1 = np.linspace(lo[0], hi[0], n1)
    z2 = np.linspace(lo[1], hi[1], n2)
    g1, g2 = np.meshgrid(z1, z2, indexing="ij")
    points = np.column_stack([g1.ravel(), g2.ravel()])
    decoded = decode_grid(model, points)
    mask = np.all(decoded > 0.0, axis=1) & np.all(np.isfinite(decoded), axis=1)
    if not mask.any():
        raise InfeasibleSpaceError("no grid cell decodes to a feasible trajectory")
    return FeasibleGrid(
        bounds=(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])),
        shape=(n1, n2), points=points, mask=mask, decoded=decoded,
    )


def init_design(grid: FeasibleGrid, j: int, rng: np.random.Generator) -> list[int]:
    """j distinct feasible cell indices, uniform without replacement."""
    feasible = np.flatnonzero(grid.mask)
    if feasible.size < j:
        raise InsufficientSpaceError(
            f"only {feasible.size} feasible cells for {j} initial samples"
        )
    return [int(i) for i in rng.choice(feasible, size=j, replace=False)]


@dataclass
class BoState:
    """Evaluation history and loop bookkeeping; all randomness is derived
    from `seed` and the iteration counter, so a serialized state resumes
    exactly."""

    seed: int
    indices: list[int] = field(default_factory=list)
    ys: list[float] = field(default_factory=list)
    iteration: int = 0
    gp: GpModel | None = None
    last_max_acq: float | None = None
    failed_indices: list[int] = field(default_factory=list)

    @property
    def best_y(self) -> float:
        return max(self.ys)

    def history(self, grid: FeasibleGrid) -> list[tuple[LatentPoint, Trajectory, float]]:
        return [(grid.point(i), grid.trajectory(i), y)
                for i, y in zip(self.indices, self.ys)]


@dataclass(frozen=True)
class OptimumReport:
    index: int
    z: LatentPoint
    trajectory: Trajectory
    value: float


@dataclass
class BoResult:
    estimated_optimum: OptimumReport
    best_evaluated: OptimumReport
    state: BoState
    grid: FeasibleGrid
    converged: bool
    stop_iteration: int
    mean_map: np.ndarray
    var_map: np.ndarray
    acq_map: np.ndarray


def _refit(state: BoState, grid: FeasibleGrid, config: BoConfig, tag: int) -> None:
    """Fit (first time) or warm-refit the GP on the current history."""
    z = grid.points[np.asarray(state.indices, dtype=np.int64)]
    y = np.asarray(state.ys, dtype=np.float64)
    fit_seed = _subseed(state.seed, _TAG_FIT, tag)
    if state.gp is None:
        cfg = GpFitConfig(
            learning_rate=config.gp_fit.learning_rate, steps=config.gp_fit.steps,
            restarts=config.gp_fit.restarts, seed=fit_seed,
            check_every=config.gp_fit.check_every, stall_tol=config.gp_fit.stall_tol,
        )
        state.gp = fit(z, y, cfg)
    else:
        cfg = refit_config(config.gp_fit, steps=config.gp_refit_steps)
        state.gp = fit(z, y, cfg, warm_start=state.gp.hyper)


def bo_step(state: BoState, grid: FeasibleGrid, objective, config: BoConfig,
            posterior: tuple[np.ndarray, np.ndarray] | None = None) -> BoState:
    """One fit -> predict -> acquire -> decode -> evaluate -> augment pass.

    A failed objective evaluation excludes the chosen cell and retries the
    next-best candidate up to 3 times before aborting the run. `posterior`
    can carry (means, variances) already computed from a GP fitted on the
    current history, to avoid refitting twice within one loop pass.
    """
    if len(state.ys) < 2:
        raise InvalidSpecError("bo_step needs at least 2 prior evaluations")
    if posterior is None:
        _refit(state, grid, config, tag=state.iteration)
        means, variances = predict_batch(state.gp, grid.points)
    else:
        means, variances = posterior
    sds = np.sqrt(variances)
    best = state.best_y
    excluded = set(state.indices) | set(state.failed_indices)

    failures = []
    for _ in range(4):  # first attempt plus up to 3 retries
        idx, acq_value = select_next(means, sds, best, grid.mask, excluded, config.acquisition)
        try:
            y = float(objective(grid.trajectory(idx)))
        except EvaluationFailedError as exc:
            failures.append((idx, str(exc)))
            state.failed_indices.append(idx)
            excluded.add(idx)
            continue
        if not math.isfinite(y):
            failures.append((idx, f"objective returned non-finite value {y}"))
            state.failed_indices.append(idx)
            excluded.add(idx)
            continue
        state.indices.append(idx)
        state.ys.append(y)
        state.iteration += 1
        state.last_max_acq = acq_value
        return state
    raise EvaluationFailedError(
        "objective failed 4 consecutive candidates: "
        + "; ".join(f"cell {i}: {msg}" for i, msg in failures)
    )


def report_optimum(state: BoState, grid: FeasibleGrid) -> tuple[OptimumReport, OptimumReport]:
    """(GP posterior-mean argmax over feasible cells, best evaluated sample).

    Ties break to the lowest grid index / earliest evaluation.
    """
    if state.gp is None:
        raise InvalidSpecError("report_optimum requires a fitted GP")
    means, _ = predict_batch(state.gp, grid.points)
    masked = np.where(grid.mask, means, -np.inf)
    est_idx = int(np.argmax(masked))
    estimated = OptimumReport(index=est_idx, z=grid.point(est_idx),
                              trajectory=grid.trajectory(est_idx),
                              value=float(means[est_idx]))
    ys = np.asarray(state.ys)
    best_pos = int(np.argmax(ys))
    best_idx = state.indices[best_pos]
    best = OptimumReport(index=best_idx, z=grid.point(best_idx),
                         trajectory=grid.trajectory(best_idx),
                         value=float(ys[best_pos]))
    return estimated, best


def posterior_maps(state: BoState, grid: FeasibleGrid,
                   acq: AcquisitionConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-major mean/variance/acquisition maps; infeasible cells are NaN."""
    means, variances = predict_batch(state.gp, grid.points)
    acq_values = np.asarray(
        score(means, np.sqrt(variances), state.best_y, acq), dtype=np.float64
    )
    nanmask = ~grid.mask
    for arr in (means, variances, acq_values):
        arr[nanmask] = np.nan
    return means, variances, acq_values


def run(objective, tvae_model: TvaeModel, train_set: TrajectorySet, config: BoConfig,
        on_iteration=None, state: BoState | None = None,
        grid: FeasibleGrid | None = None) -> BoResult:
    """Full loop: initial design, sequential steps, convergence, reporting.

    Each pass refits the GP on the augmented history and scores the
    remaining candidates; when the best acquisition value drops below
    convergence_eps * (|best y| + 1) the loop stops *before* spending that
    evaluation, so the stopping decision and the reported optimum always
    come from the same posterior. `on_iteration(state, grid)` fires after
    the initial design and after every completed step; passing a
    previously saved `state` (plus its deterministic `grid`) resumes the
    run exactly where it stopped.
    """
    if grid is None:
        grid = build_feasible_grid(tvae_model, train_set, config)
    if state is None:
        state = BoState(seed=config.seed)
    if not state.indices:
        rng = _stream(config.seed, _TAG_INIT)
        for idx in init_design(grid, config.init_samples, rng):
            y = float(objective(grid.trajectory(idx)))
            if not math.isfinite(y):
                raise EvaluationFailedError(
                    f"objective returned non-finite value at initial cell {idx}"
                )
            state.indices.append(idx)
            state.ys.append(y)
        if on_iteration is not None:
            on_iteration(state, grid)

    converged = False
    while True:
        _refit(state, grid, config, tag=state.iteration)
        if state.iteration >= config.max_iters:
            break
        means, variances = predict_batch(state.gp, grid.points)
        excluded = set(state.indices) | set(state.failed_indices)
        _, max_acq = select_next(means, np.sqrt(variances), state.best_y,
                                 grid.mask, excluded, config.acquisition)
        state.last_max_acq = max_acq
        if max_acq < config.convergence_eps * (abs(state.best_y) + 1.0):
            converged = True
            break
        bo_step(state, grid, objective, config, posterior=(means, variances))
        if on_iteration is not None:
            on_iteration(state, grid)

    estimated, best = report_optimum(state, grid)
    mean_map, var_map, acq_map = posterior_maps(state, grid, config.acquisition)
    return BoResult(
        estimated_optimum=estimated, best_evaluated=best, state=state, grid=grid,
        converged=converged, stop_iteration=state.iteration,
        mean_map=mean_map, var_map=var_map, acq_map=acq_map,
    )
