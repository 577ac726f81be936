"""Command-line entry point: experiment orchestration and structured output.

Every subcommand reads an optional JSON config, applies flag overrides,
writes CSV data files and a JSON manifest listing every emitted file with its
SHA-256 hash.  Outputs are staged in a scratch directory and moved into
place only on success, so a failed run leaves no partial files behind.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import platform
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy

from . import convergence, coupling, diffusion_model, queue_sim
from .distributions import check_assumptions, from_config as distribution_from_config
from .function_grid import SimulationGrid, grid_steps
from .noise import BrownianPath, NoiseField

log = logging.getLogger("hwspde")

COMMANDS = (
    "verify-distribution",
    "simulate-diffusion",
    "simulate-queue",
    "coupling",
    "stationary",
    "convergence-order",
)

DEFAULTS: dict[str, dict[str, Any]] = {
    "common": {
        "distribution": {"family": "Exponential", "params": {}},
        "seed": 0,
        "sigma": 1.0,
        "beta": 0.5,
        "lambda": 1.0,
        "reps": 1,
        "threads": None,
        "allow_nonpositive_beta": False,
        "grid": {"dt": 0.01, "t_max": 1.0, "r_max": None},
    },
    "verify-distribution": {"grid_step": 0.01},
    "simulate-diffusion": {
        "x0": 0.5,
        "perturbation": None,
        "snapshot_stride": 10,
        "residual_ages": [0.0, 0.5],
    },
    "simulate-queue": {
        "N": 100,
        "interarrival": {"family": "Exponential", "params": {}},
        "sample_times": [0.0, 1.0],
        "r_grid_step": 0.5,
        "r_grid_max": 2.0,
        "initial": "fluid",
    },
    "coupling": {
        "x0": 1.0,
        "x0_tilde": 0.0,
        "perturbation": None,
        "perturbation_tilde": None,
        "decay_times": [1.0, 2.0, 5.0, 10.0, 20.0],
        "grid": {"dt": 0.01, "t_max": 20.0, "r_max": 40.0},
    },
    "stationary": {
        "x0": 0.0,
        "perturbation": None,
        "burn_in": 0.5,
        "reps": 100,
        "grid": {"dt": 0.02, "t_max": 5.0, "r_max": None},
    },
    "convergence-order": {
        "harness": "spde_residual",
        "fine_dt": 1e-3,
        "factors": [4, 2, 1],
        "ages": [0.0, 0.5],
        "x0": 0.5,
        "perturbation": None,
        "shift": None,
        "grid": {"dt": 1e-3, "t_max": 1.0, "r_max": None},
    },
}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


# ---------------------------------------------------------------------------
def _merge(base: dict, over: Mapping) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config file, then command-line flags."""
    cfg = _merge(DEFAULTS["common"], DEFAULTS[command])
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = _merge(cfg, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    flag_map = {
        "seed": "seed", "reps": "reps", "sigma": "sigma", "beta": "beta", "lam": "lambda", "threads": "threads",
    }
    for attr, key in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            cfg[key] = v
    for attr, key in (("dt", "dt"), ("t_max", "t_max"), ("r_max", "r_max")):
        v = getattr(args, attr, None)
        if v is not None:
            cfg["grid"] = dict(cfg["grid"], **{key: v})
    if args.family is not None:
        cfg["distribution"] = {"family": args.family, "params": {}}
    if args.params is not None:
        try:
            params = json.loads(args.params)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--params must be a JSON object: {exc}") from exc
        if not isinstance(params, dict):
            raise ConfigError("--params must be a JSON object")
        cfg["distribution"] = dict(cfg["distribution"], params=params)
    if args.allow_nonpositive_beta:
        cfg["allow_nonpositive_beta"] = True
    validate_config(command, cfg)
    return cfg


def validate_config(command: str, cfg: dict) -> None:
    if not cfg["beta"] > 0 and not cfg["allow_nonpositive_beta"] and command != "verify-distribution":
        raise ConfigError("beta must be positive (use --allow-nonpositive-beta to override)")
    if not cfg["sigma"] > 0:
        raise ConfigError("sigma must be positive")
    if not cfg["lambda"] > 0:
        raise ConfigError("lambda must be positive")
    if int(cfg["reps"]) < 1:
        raise ConfigError("reps must be at least 1")
    grid = cfg["grid"]
    if "dr" in grid and grid["dr"] != grid["dt"]:
        raise ConfigError("the age step must equal the time step (dr = dt)")
    if not grid["dt"] > 0 or not grid["t_max"] > 0:
        raise ConfigError("grid dt and t_max must be positive")
    try:
        grid_steps(grid["t_max"], grid["dt"])
        if grid.get("r_max") is not None:
            grid_steps(grid["r_max"], grid["dt"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        distribution_from_config(cfg["distribution"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid distribution: {exc}") from exc


# ---------------------------------------------------------------------------
def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


@dataclass
class OutputStage:
    """Collects files in a scratch directory and publishes them atomically."""

    out: Path
    scratch: Path = field(init=False)
    files: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.scratch = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.partial-", dir=self.out.parent))

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
        with open(self.scratch / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.files.append(name)

    def write_json(self, name: str, payload: Mapping) -> None:
        with open(self.scratch / name, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.files.append(name)

    def hashes(self) -> dict:
        out = {}
        for name in self.files:
            out[name] = hashlib.sha256((self.scratch / name).read_bytes()).hexdigest()
        return out

    def publish(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        for name in self.files:
            os.replace(self.scratch / name, self.out / name)
        shutil.rmtree(self.scratch, ignore_errors=True)

    def discard(self) -> None:
        shutil.rmtree(self.scratch, ignore_errors=True)


def versions() -> dict:
    try:
        pkg = importlib_metadata.version("artifact")
    except importlib_metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


# ---------------------------------------------------------------------------
def _perturbation(pert):
    if pert is None:
        return None
    return diffusion_model.bump_perturbation(pert.get("amplitudes", []), pert.get("rates", []))


def _grid(cfg: dict, d) -> SimulationGrid:
    g = cfg["grid"]
    r_max = g.get("r_max")
    if r_max is None:
        r_max = diffusion_model.default_r_max(d, g["dt"])
    return SimulationGrid(g["dt"], g["t_max"], r_max)


def _threads(cfg: dict) -> int:
    return int(cfg["threads"]) if cfg.get("threads") else (os.cpu_count() or 1)


def cmd_verify_distribution(cfg: dict, stage: OutputStage) -> dict:
    d = distribution_from_config(cfg["distribution"])
    rep = check_assumptions(d)
    stage.write_json("assumption_report.json", rep.to_dict())
    step = cfg["grid_step"]
    ages = np.arange(0.0, rep.r_max + step / 2, step)
    stage.write_csv("hazard.csv", ["x", "ccdf", "pdf", "hazard", "h2"],
                    zip(ages, d.ccdf(ages), d.pdf(ages), d.hazard(ages), d.h2(ages)))
    return {"pass_all": rep.passed, "pass": rep.passes}


def cmd_simulate_diffusion(cfg: dict, stage: OutputStage) -> dict:
    d = distribution_from_config(cfg["distribution"])
    grid = _grid(cfg, d)
    seeds = [diffusion_model.replication_seed(cfg["seed"], i) for i in range(int(cfg["reps"]))]
    path_rows, snap_rows = [], []
    max_rz = max_rx = bmax = 0.0
    for rep_id, s in enumerate(seeds):
        y0 = diffusion_model.canonical_state(cfg["x0"], d, grid.r_max, grid.dt, _perturbation(cfg["perturbation"]))
        B = BrownianPath.generate(grid.t_max, grid.dt, s)
        M = NoiseField.generate(d, grid, s)
        p = diffusion_model.build_diffusion(y0, B, M, d, cfg["sigma"], cfg["beta"],
                                            snapshot_stride=int(cfg["snapshot_stride"]),
                                            allow_nonpositive_beta=cfg["allow_nonpositive_beta"])
        for r in cfg["residual_ages"]:
            rp = diffusion_model.spde_residual_paths(p, grid_steps(r, grid.dt))
            max_rz = max(max_rz, float(np.max(np.abs(rp.res_z))))
            max_rx = max(max_rx, float(np.max(np.abs(rp.res_x))))
        bmax = max(bmax, p.boundary_defect())
        t = p.X.t
        path_rows.extend(zip([rep_id] * t.size, t, p.X.values, p.K.values, p.E.values))
        for n in p.snapshot_index:
            snap = p.snapshot(int(n))
            snap_rows.extend(zip([rep_id] * snap.r.size, [n * grid.dt] * snap.r.size, snap.r, snap.values, snap.derivs))
    stage.write_csv("paths.csv", ["rep", "t", "X", "K", "E"], path_rows)
    stage.write_csv("z_snapshots.csv", ["rep", "t", "r", "Z", "dZ"], snap_rows)
    report = {"max_res_z": max_rz, "max_res_x": max_rx, "boundary_max": bmax, "seeds": seeds, "grid": grid.to_dict()}
    stage.write_json("residual_report.json", report)
    return report


def _one_queue(qcfg: queue_sim.QueueConfig):
    path = queue_sim.run_queue(qcfg)
    return path, queue_sim.scale_state(path)


def cmd_simulate_queue(cfg: dict, stage: OutputStage) -> dict:
    d = distribution_from_config(cfg["distribution"])
    ia = distribution_from_config(cfg["interarrival"])
    r_grid = tuple(np.arange(0.0, cfg["r_grid_max"] + cfg["r_grid_step"] / 2, cfg["r_grid_step"]))
    seeds = [diffusion_model.replication_seed(cfg["seed"], i) for i in range(int(cfg["reps"]))]
    qcfgs = [
        queue_sim.QueueConfig(N=int(cfg["N"]), beta=cfg["beta"], service=d, interarrival=ia,
                              horizon=max(cfg["sample_times"]), seed=s, sample_times=tuple(cfg["sample_times"]),
                              r_grid=r_grid, initial=cfg["initial"])
        for s in seeds
    ]
    with ThreadPoolExecutor(_threads(cfg)) as pool:
        results = list(pool.map(_one_queue, qcfgs))
    x_rows, z_rows = [], []
    events = checks = 0
    for rep_id, (path, sp) in enumerate(results):
        events += path.n_events
        checks += path.invariant_checks
        for i, t in enumerate(sp.times):
            x_rows.append((rep_id, t, int(path.X[i]), sp.X_hat[i]))
            for k, r in enumerate(sp.r_grid):
                z_rows.append((rep_id, t, r, path.Z[i, k], sp.Z_hat[i, k]))
    stage.write_csv("x_hat.csv", ["rep", "t", "X", "X_hat"], x_rows)
    stage.write_csv("z_hat.csv", ["rep", "t", "r", "Z", "Z_hat"], z_rows)
    report = {
        "events": events,
        "invariant_checks": checks,
        "invariants": ["mass_balance", "non_idling", "entry_balance"],
        "violations": 0,
        "sigma": qcfgs[0].sigma,
        "lambda_N": qcfgs[0].lambda_N,
        "seeds": seeds,
        "metadata": results[0][1].metadata,
    }
    stage.write_json("invariant_report.json", report)
    return report


def cmd_coupling(cfg: dict, stage: OutputStage) -> dict:
    d = distribution_from_config(cfg["distribution"])
    grid = _grid(cfg, d)
    y = diffusion_model.canonical_state(cfg["x0"], d, grid.r_max, grid.dt, _perturbation(cfg["perturbation"]))
    yt = diffusion_model.canonical_state(cfg["x0_tilde"], d, grid.r_max, grid.dt,
                                         _perturbation(cfg["perturbation_tilde"]))
    seed = diffusion_model.replication_seed(cfg["seed"], 0)
    times = [t for t in cfg["decay_times"] if t <= grid.t_max]
    pair = coupling.coupled_from_seed(d, y, yt, cfg["lambda"], cfg["sigma"], cfg["beta"], grid.dt, grid.t_max, seed,
                                      snapshots=[])
    rows = coupling.decay_report(pair, times)
    fields = ["t", "abs_delta_x", "delta_z_h1", "shifted_dz0_h1", "gbar_dxm_h1", "zeta_h1", "xi_h1",
              "decomposition_defect"]
    stage.write_csv("decay_table.csv", fields, ([getattr(r, f) for f in fields] for r in rows))
    bound = coupling.delta_r_bound_check(pair)
    gw = coupling.girsanov_weight(pair)
    report = {
        "lhs": bound.lhs, "rhs": bound.rhs, "pass": bound.passed, "margin": bound.margin,
        "constants": bound.constants, "diagnostics": pair.diagnostics,
        "paths_agree": coupling.delta_r_paths_agree(pair),
        "m_l2_sq": gw.m_l2_sq, "m_bound": gw.bound,
        "thresholds_are_empirical": True, "seed": seed, "grid": grid.to_dict(),
    }
    stage.write_json("delta_r_bound.json", report)
    stage.write_csv("log_n.csv", ["t", "logN", "m"], zip(pair.logN.t, pair.logN.values, pair.m.values))
    return {"pass": bound.passed, "paths_agree": report["paths_agree"]}


def cmd_stationary(cfg: dict, stage: OutputStage) -> dict:
    d = distribution_from_config(cfg["distribution"])
    g = cfg["grid"]
    sc = diffusion_model.StationaryConfig(
        d=d, sigma=cfg["sigma"], beta=cfg["beta"], dt=g["dt"], t_max=g["t_max"], r_max=g.get("r_max"),
        reps=int(cfg["reps"]), seed=int(cfg["seed"]), x0=cfg["x0"], perturbation=_perturbation(cfg["perturbation"]),
        burn_in=cfg["burn_in"], threads=_threads(cfg),
    )
    est = diffusion_model.estimate_stationary(sc)
    stage.write_csv("samples.csv", ["seed", "X_T", "Z_H1_T", "Z0_T", "X_time_avg"],
                    zip(est.seeds, est.x_T, est.z_norm_T, est.z0_T, est.x_time_avg))
    summary = est.summary()
    stage.write_json("summary.json", summary)
    return summary


def cmd_convergence_order(cfg: dict, stage: OutputStage) -> dict:
    d = distribution_from_config(cfg["distribution"])
    harnesses = cfg["harness"] if isinstance(cfg["harness"], list) else [cfg["harness"]]
    reports = {}
    rows = []
    for h in harnesses:
        rep = convergence.convergence_order(
            h, d, fine_dt=cfg["fine_dt"], t_max=cfg["grid"]["t_max"], seed=int(cfg["seed"]),
            factors=tuple(cfg["factors"]), ages=tuple(cfg["ages"]), x0=cfg["x0"], sigma=cfg["sigma"],
            beta=cfg["beta"], perturbation=_perturbation(cfg["perturbation"]),
            shift=tuple(cfg["shift"]) if cfg["shift"] else None, r_max=cfg["grid"].get("r_max"),
        )
        reports[h] = {"steps": rep.steps, "errors": rep.errors, "orders": rep.orders, "min_order": rep.min_order}
        for i, dt in enumerate(rep.steps):
            for name, errs in rep.errors.items():
                order = rep.orders[name][i - 1] if i > 0 else math.nan
                rows.append((h, name, dt, errs[i], order))
    stage.write_csv("orders.csv", ["harness", "residual", "dt", "error", "order"], rows)
    stage.write_json("orders.json", reports)
    return {h: r["min_order"] for h, r in reports.items()}


HANDLERS: dict[str, Callable[[dict, OutputStage], dict]] = {
    "verify-distribution": cmd_verify_distribution,
    "simulate-diffusion": cmd_simulate_diffusion,
    "simulate-queue": cmd_simulate_queue,
    "coupling": cmd_coupling,
    "stationary": cmd_stationary,
    "convergence-order": cmd_convergence_order,
}


def run(command: str, cfg: dict, out: str | Path) -> dict:
    """Execute ``command`` with a resolved config; returns the manifest."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    stage = OutputStage(Path(out))
    try:
        summary = HANDLERS[command](cfg, stage)
        manifest = {
            "command": command,
            "config": cfg,
            "seed": cfg["seed"],
            "versions": versions(),
            "summary": summary,
            "files": stage.hashes(),
        }
        stage.write_json("manifest.json", manifest)
        stage.publish()
        return manifest
    except BaseException:
        stage.discard()
        raise


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hwspde", description="Diffusion model of many-server queues: experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--t-max", dest="t_max", type=float)
        p.add_argument("--r-max", dest="r_max", type=float)
        p.add_argument("--reps", type=int)
        p.add_argument("--family")
        p.add_argument("--params", help="distribution parameters as a JSON object")
        p.add_argument("--sigma", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--allow-nonpositive-beta", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
        manifest = run(args.command, cfg, args.out)
    except ConfigError as exc:
        log.error("invalid configuration: %s", exc)
        return 2
    except Exception as exc:  # diagnostics for any failure inside a run
        log.error("%s failed: %s", args.command, exc)
        return 1
    log.info("%s: wrote %d files to %s", args.command, len(manifest["files"]), args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
