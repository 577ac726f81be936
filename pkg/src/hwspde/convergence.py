"""Empirical convergence orders of pathwise residuals on nested grids.

One Brownian path and one noise field are generated on the finest grid and
coarsened by summing increments, so every resolution sees the same noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .diffusion_model import (
    DiffusionPath,
    build_diffusion,
    canonical_state,
    default_r_max,
    markov_shift_report,
    spde_residual_paths,
)
from .distributions import ServiceDistribution
from .function_grid import SimulationGrid, grid_steps
from .noise import BrownianPath, NoiseField, fubini_residual_path

HARNESSES = ("spde_residual", "markov_shift", "fubini")


@dataclass(frozen=True)
class OrderReport:
    """Error metrics per grid step and the empirical orders between neighbours."""

    harness: str
    steps: tuple[float, ...]
    errors: dict[str, tuple[float, ...]]
    orders: dict[str, tuple[float, ...]] = field(default_factory=dict)

    @property
    def min_order(self) -> float:
        vals = [o for v in self.orders.values() for o in v]
        return min(vals) if vals else math.nan

    def to_rows(self) -> list[dict]:
        rows = []
        for i, h in enumerate(self.steps):
            row = {"dt": h}
            for name, errs in self.errors.items():
                row[name] = errs[i]
                row[f"order_{name}"] = self.orders[name][i - 1] if i > 0 else math.nan
            rows.append(row)
        return rows


def empirical_orders(errors: Sequence[float], ratio: float = 2.0) -> tuple[float, ...]:
    """log_ratio(e_coarse / e_fine) between successive (coarse to fine) errors."""
    e = np.asarray(errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return tuple(float(v) for v in np.log(e[:-1] / e[1:]) / math.log(ratio))


@dataclass
class NestedGrids:
    """Brownian path and noise field on the finest grid, plus the coarsened copies."""

    d: ServiceDistribution
    t_max: float
    r_max: float
    fine_dt: float
    factors: tuple[int, ...]
    seed: int
    B: dict[int, BrownianPath] = field(default_factory=dict)
    M: dict[int, NoiseField] = field(default_factory=dict)

    @classmethod
    def generate(cls, d: ServiceDistribution, t_max: float, fine_dt: float, seed: int,
                 factors: Sequence[int] = (4, 2, 1), r_max: float | None = None) -> "NestedGrids":
        coarse = fine_dt * max(factors)
        if r_max is None:
            r_max = default_r_max(d, coarse)
        grid = SimulationGrid(fine_dt, t_max, r_max)
        grid_steps(t_max, coarse)
        grid_steps(r_max, coarse)
        B = BrownianPath.generate(t_max, fine_dt, seed)
        M = NoiseField.generate(d, grid, seed)
        out = cls(d, t_max, r_max, fine_dt, tuple(sorted(factors, reverse=True)), seed)
        for f in out.factors:
            out.B[f] = B if f == 1 else B.coarsen(f)
            out.M[f] = M if f == 1 else M.coarsen(f)
        return out

    def dt(self, factor: int) -> float:
        return self.fine_dt * factor


def _path(ng: NestedGrids, f: int, x0: float, sigma: float, beta: float,
          perturbation) -> DiffusionPath:
    dt = ng.dt(f)
    y0 = canonical_state(x0, ng.d, ng.r_max, dt, perturbation)
    return build_diffusion(y0, ng.B[f], ng.M[f], ng.d, sigma, beta, snapshots=[])


def spde_residual_errors(path: DiffusionPath, ages: Sequence[float]) -> dict[str, float]:
    out = {"res_z": 0.0, "res_x": 0.0}
    for r in ages:
        rp = spde_residual_paths(path, grid_steps(r, path.dt))
        out["res_z"] = max(out["res_z"], float(np.max(np.abs(rp.res_z))))
        out["res_x"] = max(out["res_x"], float(np.max(np.abs(rp.res_x))))
    return out


def markov_shift_errors(path: DiffusionPath, s: float, t: float, ages: Sequence[float]) -> dict[str, float]:
    out = {"res_zshift": 0.0, "res_lambda": 0.0}
    for r in ages:
        rep = markov_shift_report(path, s, t, r)
        out["res_zshift"] = max(out["res_zshift"], abs(rep.res_zshift))
        out["res_lambda"] = max(out["res_lambda"], abs(rep.res_lambda))
    return out


def convergence_order(harness: str, d: ServiceDistribution, fine_dt: float = 1e-3, t_max: float = 1.0,
                      seed: int = 0, factors: Sequence[int] = (4, 2, 1), ages: Sequence[float] = (0.0, 0.5),
                      x0: float = 0.5, sigma: float = 1.0, beta: float = 0.5,
                      perturbation: tuple[Callable, Callable] | None = None,
                      shift: tuple[float, float] | None = None, r_max: float | None = None) -> OrderReport:
    """Residual sizes at dt = fine_dt * factor for each factor, on shared noise.

    ``shift`` = (s, t) for the Markov shift harness; default (t_max / 2, t_max / 2).
    """
    if harness not in HARNESSES:
        raise ValueError(f"harness must be one of {HARNESSES}")
    ng = NestedGrids.generate(d, t_max, fine_dt, seed, factors, r_max)
    errors: dict[str, list[float]] = {}
    for f in ng.factors:
        if harness == "fubini":
            e = {"fubini": max(float(np.max(np.abs(fubini_residual_path(ng.M[f], d, grid_steps(r, ng.dt(f))))))
                               for r in ages)}
        else:
            p = _path(ng, f, x0, sigma, beta, perturbation)
            if harness == "spde_residual":
                e = spde_residual_errors(p, ages)
            else:
                s, t = shift if shift is not None else (t_max / 2, t_max / 2)
                e = markov_shift_errors(p, s, t, ages)
            p.conv.release()
        for k, v in e.items():
            errors.setdefault(k, []).append(v)
    ratio = ng.factors[0] / ng.factors[1] if len(ng.factors) > 1 else 2.0
    return OrderReport(
        harness,
        tuple(ng.dt(f) for f in ng.factors),
        {k: tuple(v) for k, v in errors.items()},
        {k: empirical_orders(v, ratio) for k, v in errors.items()},
    )
