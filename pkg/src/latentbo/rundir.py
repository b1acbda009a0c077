"""Run-directory layout and resumable execution of the optimization loop.

A run directory contains:

    config.json    resolved run configuration (written once, at start)
    history.csv    eval,z1,z2,y — one row per objective evaluation
    state.json     resumable snapshot, rewritten after every iteration
    grid_mean.csv  row-major GP mean map (bounds/resolution header)
    grid_var.csv   row-major GP variance map
    grid_acq.csv   row-major acquisition map
    gp.json        final fitted surrogate (Cholesky recomputed on load)
    optimum.json   estimated + best-evaluated optima with trajectories
    timing.log     wall-clock per evaluation; the only timestamped file

Everything except timing.log is byte-deterministic given the seed, and
resuming an interrupted run continues it to the identical final history.
"""

from __future__ import annotations

import json
import os
import time
from contextlib import contextmanager

import numpy as np

from .errors import LatentBoError
from .gp import GpFitConfig, GpHyperparams, fit, save_gp
from .loop import BoConfig, BoResult, BoState, FeasibleGrid, build_feasible_grid, run
from .trajectory import TrajectorySet
from .vae import TvaeModel

LOCK_NAME = ".lock"


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


@contextmanager
def run_lock(run_dir):
    """Exclusive lock file guarding one writer per run directory."""
    path = os.path.join(run_dir, LOCK_NAME)
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LatentBoError(
            f"run directory is locked by another process (remove {path} if stale)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        try:
            os.remove(path)
        except FileNotFoundError:
            pass


def write_history(run_dir, state: BoState, grid: FeasibleGrid) -> None:
    rows = ["eval,z1,z2,y"]
    for ordinal, (idx, y) in enumerate(zip(state.indices, state.ys)):
        z = grid.points[idx]
        rows.append(f"{ordinal},{_fmt(z[0])},{_fmt(z[1])},{_fmt(y)}")
    with open(os.path.join(run_dir, "history.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")


def write_state(run_dir, state: BoState) -> None:
    doc = {
        "seed": state.seed,
        "iteration": state.iteration,
        "indices": state.indices,
        "ys": state.ys,
        "failed_indices": state.failed_indices,
        "last_max_acq": state.last_max_acq,
        "hyper": None if state.gp is None else {
            "log_sigma2": state.gp.hyper.log_sigma2,
            "log_lengthscales": list(state.gp.hyper.log_lengthscales),
            "nugget": state.gp.hyper.nugget,
        },
    }
    path = os.path.join(run_dir, "state.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_state(run_dir, grid: FeasibleGrid) -> BoState | None:
    """Rebuild a BoState from state.json; None when no snapshot exists.

    The GP itself is refit lazily on the next step; only its warm-start
    hyperparameters are restored, which is what exact continuation needs.
    """
    path = os.path.join(run_dir, "state.json")
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        doc = json.load(fh)
    state = BoState(
        seed=int(doc["seed"]),
        indices=[int(i) for i in doc["indices"]],
        ys=[float(y) for y in doc["ys"]],
        iteration=int(doc["iteration"]),
        failed_indices=[int(i) for i in doc["failed_indices"]],
        last_max_acq=None if doc["last_max_acq"] is None else float(doc["last_max_acq"]),
    )
    if doc["hyper"] is not None:
        h = doc["hyper"]
        hyper = GpHyperparams(
            log_sigma2=float(h["log_sigma2"]),
            log_lengthscales=(float(h["log_lengthscales"][0]), float(h["log_lengthscales"][1])),
            nugget=float(h["nugget"]),
        )
        # Reconstruct the fitted GP exactly as the warm-start carrier.
        z = grid.points[np.asarray(state.indices, dtype=np.int64)]
        state.gp = fit(z, np.asarray(state.ys), GpFitConfig(steps=0), warm_start=hyper)
    return state


def write_map(path, values: np.ndarray, grid: FeasibleGrid) -> None:
    z1_lo, z1_hi, z2_lo, z2_hi = grid.bounds
    n1, n2 = grid.shape
    lines = [
        "z1_lo,z1_hi,z2_lo,z2_hi,n1,n2",
        f"{_fmt(z1_lo)},{_fmt(z1_hi)},{_fmt(z2_lo)},{_fmt(z2_hi)},{n1},{n2}",
    ]
    mat = values.reshape(n1, n2)
    for row in mat:
        lines.append(",".join("nan" if not np.isfinite(v) else _fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_map(path) -> tuple[dict, np.ndarray]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    keys = lines[0].split(",")
    vals = lines[1].split(",")
    header = dict(zip(keys, vals))
    n1, n2 = int(header["n1"]), int(header["n2"])
    mat = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])
    if mat.shape != (n1, n2):
        raise LatentBoError(f"map shape {mat.shape} does not match header ({n1}, {n2})")
    meta = {
        "bounds": (float(header["z1_lo"]), float(header["z1_hi"]),
                   float(header["z2_lo"]), float(header["z2_hi"])),
        "shape": (n1, n2),
    }
    return meta, mat


def _report_dict(report) -> dict:
    return {
        "index": report.index,
        "z": [report.z.z1, report.z.z2],
        "value": report.value,
        "trajectory": [float(v) for v in report.trajectory.values],
    }


def write_result(run_dir, result: BoResult) -> None:
    write_map(os.path.join(run_dir, "grid_mean.csv"), result.mean_map, result.grid)
    write_map(os.path.join(run_dir, "grid_var.csv"), result.var_map, result.grid)
    write_map(os.path.join(run_dir, "grid_acq.csv"), result.acq_map, result.grid)
    save_gp(result.state.gp, os.path.join(run_dir, "gp.json"))
    doc = {
        "estimated": _report_dict(result.estimated_optimum),
        "best_evaluated": _report_dict(result.best_evaluated),
        "converged": result.converged,
        "stop_iteration": result.stop_iteration,
        "evaluations": len(result.state.ys),
    }
    with open(os.path.join(run_dir, "optimum.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def execute_run(run_dir, objective, tvae_model: TvaeModel, train_set: TrajectorySet,
                config: BoConfig, resume: bool = False, on_iteration=None) -> BoResult:
    """Run (or resume) the loop inside `run_dir`, persisting incrementally.

    `on_iteration(state, grid)` is forwarded to the loop after the
    directory snapshot is written, so interrupting inside it leaves a
    resumable directory behind.
    """
    os.makedirs(run_dir, exist_ok=True)
    with run_lock(run_dir):
        grid = build_feasible_grid(tvae_model, train_set, config)
        state = load_state(run_dir, grid) if resume else None
        timing_path = os.path.join(run_dir, "timing.log")
        t_last = time.monotonic()

        def persist(st: BoState, g: FeasibleGrid) -> None:
            nonlocal t_last
            write_history(run_dir, st, g)
            write_state(run_dir, st)
            now = time.monotonic()
            with open(timing_path, "a") as fh:
                fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} "
                         f"evals={len(st.ys)} wall={now - t_last:.3f}s\n")
            t_last = now
            if on_iteration is not None:
                on_iteration(st, g)

        result = run(objective, tvae_model, train_set, config,
                     on_iteration=persist, state=state, grid=grid)
        write_history(run_dir, result.state, result.grid)
        write_state(run_dir, result.state)
        write_result(run_dir, result)
    return result
