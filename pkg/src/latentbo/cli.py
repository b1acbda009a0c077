"""Command-line front end.

Subcommands:
    gen         generate a trajectory set (CSV + provenance JSON)
    train-tvae  train the trajectory VAE (checkpoint + loss history CSV)
    run-zbo     run or resume the latent optimization loop (run directory)
    report      render map graymaps + optimum summary from a run directory

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from . import rundir
from .errors import LatentBoError, TrainingDivergedError
from .objective import ExternalSpec, ObjectiveFn, SyntheticSmoothnessSpec, SyntheticTargetSpec
from .trajectory import (
    TrajectorySet,
    generate,
    load_set_csv,
    rescale_set,
    save_set_csv,
    spec_to_dict,
)
from .vae import init_model, load_checkpoint, save_checkpoint, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def cmd_gen(args) -> int:
    cfg = cfgmod.load_config(args.config, args.seed)
    out = args.out
    os.makedirs(out, exist_ok=True)
    paths = cfgmod.paths_for(out)
    specs = cfgmod.expand_family_specs(cfg)
    tset = TrajectorySet([generate(s) for s in specs], specs)
    if cfg.rescale:
        tset = rescale_set(tset, cfg.value_range)
    save_set_csv(tset, paths["trajectories"])
    with open(paths["provenance"], "w") as fh:
        json.dump([spec_to_dict(s) for s in specs], fh, indent=2, sort_keys=True)
    print(f"wrote {len(tset.trajectories)} trajectories of length {tset.n_epochs} "
          f"to {paths['trajectories']}")
    return EXIT_OK


def cmd_train_tvae(args) -> int:
    cfg = cfgmod.load_config(args.config, args.seed)
    out = args.out
    paths = cfgmod.paths_for(out)
    if not os.path.exists(paths["trajectories"]):
        raise LatentBoError(f"no trajectory CSV at {paths['trajectories']}; run gen first")
    tset = load_set_csv(paths["trajectories"])
    tvae_config = cfgmod.build_tvae_config(cfg)
    model = init_model(tvae_config, cfg.tvae_init_seed)
    trained, report = train(model, tset, tvae_config)
    save_checkpoint(trained, paths["checkpoint"])
    with open(paths["loss_history"], "w") as fh:
        fh.write("epoch,total,recon,kl\n")
        for i, (t, r, k) in enumerate(zip(report.total, report.recon, report.kl)):
            fh.write(f"{i},{_fmt(t)},{_fmt(r)},{_fmt(k)}\n")
    if report.total:
        first, last, lowest = report.total[0], report.total[-1], min(report.total)
        trend = "decreasing" if last < first else "non-decreasing"
        print(f"trained {tvae_config.epochs} epochs: loss first={first:.4f} "
              f"last={last:.4f} min={lowest:.4f} ({trend})")
    else:
        print("epochs=0: checkpoint written unchanged")
    return EXIT_OK


def _build_objective(cfg: cfgmod.RunConfig) -> ObjectiveFn:
    obj = cfg.objective
    kind = obj.get("kind")
    if kind == "synthetic_target":
        return ObjectiveFn(SyntheticTargetSpec(target=cfgmod.resolve_target(cfg)))
    if kind == "synthetic_smoothness":
        return ObjectiveFn(SyntheticSmoothnessSpec())
    if kind == "external":
        command = obj.get("command")
        address = obj.get("address")
        return ObjectiveFn(ExternalSpec(
            command=None if command is None else tuple(command),
            address=None if address is None else (str(address[0]), int(address[1])),
            pairs=int(obj.get("pairs", 10)),
            seed=cfg.objective_seed,
            include_within=bool(obj.get("include_within", True)),
            timeout_s=float(obj.get("timeout_s", 600.0)),
            config_override=dict(obj.get("config_override", {})),
        ))
    raise cfgmod.ConfigError(f"unsupported objective kind {kind!r}")


def cmd_run_zbo(args) -> int:
    if args.resume:
        run_dir = args.resume
        config_path = os.path.join(run_dir, "config.json")
        if not os.path.exists(config_path):
            raise LatentBoError(f"cannot resume: no config.json in {run_dir}")
        cfg = cfgmod.load_config(config_path)
        resume = True
    else:
        if not args.config or not args.out:
            raise cfgmod.ConfigError("run-zbo needs --config and --out (or --resume <dir>)")
        run_dir = args.out
        cfg = cfgmod.load_config(args.config, args.seed)
        resume = False
    paths = cfgmod.paths_for(run_dir)
    for need in ("trajectories", "checkpoint"):
        if not os.path.exists(paths[need]):
            raise LatentBoError(f"missing {paths[need]}; run gen and train-tvae first")
    tset = load_set_csv(paths["trajectories"])
    model = load_checkpoint(paths["checkpoint"])
    bo_config = cfgmod.build_bo_config(cfg)
    if not resume:
        os.makedirs(run_dir, exist_ok=True)
        cfgmod.save_resolved(cfg, paths["config"])
    with _build_objective(cfg) as objective:
        result = rundir.execute_run(run_dir, objective, model, tset, bo_config, resume=resume)
    est, best = result.estimated_optimum, result.best_evaluated
    print(f"estimated optimum: z=({est.z.z1:.4f}, {est.z.z2:.4f}) gp_mean={est.value:.6g}")
    print(f"best evaluated:    z=({best.z.z1:.4f}, {best.z.z2:.4f}) y={best.value:.6g}")
    print(f"budget: {len(result.state.ys)} evaluations "
          f"({bo_config.init_samples} initial + {result.state.iteration} iterations)")
    print(f"converged: {result.converged}")
    return EXIT_OK


def _render_pgm(map_path, pgm_path, sidecar_path, marker: dict | None) -> None:
    meta, mat = rundir.read_map(map_path)
    finite = np.isfinite(mat)
    if finite.any():
        vmin = float(np.nanmin(mat))
        vmax = float(np.nanmax(mat))
    else:
        vmin = vmax = 0.0
    span = vmax - vmin
    if span > 0:
        pixels = np.where(finite, np.rint(255.0 * (mat - vmin) / span), 0.0).astype(int)
    else:
        pixels = np.zeros_like(mat, dtype=int)
    n1, n2 = meta["shape"]
    lines = ["P2", f"{n2} {n1}", "255"]
    for row in pixels:
        lines.append(" ".join(str(int(p)) for p in row))
    with open(pgm_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    sidecar = {
        "vmin": vmin, "vmax": vmax, "rows": n1, "cols": n2,
        "nan_pixel": 0, "bounds": list(meta["bounds"]),
    }
    if marker is not None:
        sidecar["estimated_optimum"] = marker
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def cmd_report(args) -> int:
    run_dir = args.out or args.resume
    if not run_dir:
        raise cfgmod.ConfigError("report needs --out <run_dir>")
    optimum_path = os.path.join(run_dir, "optimum.json")
    if not os.path.exists(optimum_path):
        raise LatentBoError(f"no optimum.json in {run_dir}; run run-zbo first")
    with open(optimum_path) as fh:
        optimum = json.load(fh)
    _, mean_map = rundir.read_map(os.path.join(run_dir, "grid_mean.csv"))
    n2 = mean_map.shape[1]
    est_index = int(optimum["estimated"]["index"])
    marker = {
        "index": est_index,
        "row": est_index // n2,
        "col": est_index % n2,
        "z": optimum["estimated"]["z"],
    }
    for name in ("mean", "var", "acq"):
        _render_pgm(
            os.path.join(run_dir, f"grid_{name}.csv"),
            os.path.join(run_dir, f"map_{name}.pgm"),
            os.path.join(run_dir, f"map_{name}.json"),
            marker,
        )
    traj = optimum["estimated"]["trajectory"]
    with open(os.path.join(run_dir, "optimum_trajectory.csv"), "w") as fh:
        fh.write(",".join(f"e{i}" for i in range(len(traj))) + "\n")
        fh.write(",".join(_fmt(v) for v in traj) + "\n")
    print(f"rendered 3 maps and the optimum trajectory into {run_dir}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latentbo", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("gen", cmd_gen), ("train-tvae", cmd_train_tvae),
                     ("run-zbo", cmd_run_zbo), ("report", cmd_report)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="path to the run config JSON")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--resume", help="existing run directory to continue")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        if args.command in ("gen", "train-tvae") and (not args.config or not args.out):
            raise cfgmod.ConfigError(f"{args.command} needs --config and --out")
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"error: training diverged at epoch {exc.epoch}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except LatentBoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
