"""Functions on uniform age grids and paths on uniform time grids.

Age grids and time grids share the same step, so evaluating ``f(t + r)`` at a
grid time ``t`` is an index shift.  Norms use the trapezoidal rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

TailRule = Optional[Callable[[np.ndarray], np.ndarray]]

ALIGN_TOL = 1e-9


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


def grid_steps(length: float, step: float) -> int:
    """Number of cells of width ``step`` in ``length``; rejects misalignment."""
    n = length / step
    k = int(round(n))
    if abs(n - k) > ALIGN_TOL * max(1.0, abs(n)):
        raise ValueError(f"{length} is not a multiple of the grid step {step}")
    return k


def trapezoid_weights(n: int, step: float) -> np.ndarray:
    """Trapezoidal weights for n + 1 equally spaced nodes."""
    w = np.full(n + 1, step)
    if n == 0:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * step
    return w


@dataclass(frozen=True)
class GridFunction:
    """Values of a function at r_k = k * dr, k = 0..n_r.

    ``tail`` optionally continues the function analytically beyond r_max;
    without it the function is extended by zero.
    """

    r_max: float
    n_r: int
    values: np.ndarray
    tail: TailRule = field(default=None, compare=False, repr=False)
    tail_offset: int = field(default=0, compare=False, repr=False)

    def __post_init__(self):
        if self.n_r <= 0 or not self.r_max > 0:
            raise ValueError("grid needs r_max > 0 and n_r >= 1")
        vals = _frozen(self.values)
        if vals.shape != (self.n_r + 1,):
            raise ValueError(f"expected {self.n_r + 1} values, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def dr(self) -> float:
        return self.r_max / self.n_r

    @property
    def r(self) -> np.ndarray:
        return np.arange(self.n_r + 1) * self.dr

    @classmethod
    def from_callable(cls, fn: Callable[[np.ndarray], np.ndarray], r_max: float, n_r: int,
                      analytic_tail: bool = False) -> "GridFunction":
        r = np.arange(n_r + 1) * (r_max / n_r)
        return cls(r_max, n_r, np.asarray(fn(r), dtype=float), tail=fn if analytic_tail else None)

    def extended(self, n_total: int) -> np.ndarray:
        """Values on r_k for k = 0..n_total, continuing past r_max by the tail rule."""
        if n_total <= self.n_r:
            return np.array(self.values[: n_total + 1])
        extra_r = np.arange(self.n_r + 1 + self.tail_offset, n_total + 1 + self.tail_offset) * self.dr
        extra = np.asarray(self.tail(extra_r), dtype=float) if self.tail is not None else np.zeros(extra_r.size)
        return np.concatenate([self.values, extra])

    def shift_index(self, j: int) -> "GridFunction":
        vals = self.extended(self.n_r + j)[j:]
        return GridFunction(self.r_max, self.n_r, vals, tail=self.tail, tail_offset=self.tail_offset + j)

    def to_columns(self) -> dict:
        return {"r": self.r, "value": np.array(self.values)}


@dataclass(frozen=True)
class H1GridFunction:
    """A grid function paired with its weak derivative on the same grid."""

    base: GridFunction
    deriv: GridFunction

    def __post_init__(self):
        if self.base.n_r != self.deriv.n_r or not math.isclose(self.base.r_max, self.deriv.r_max):
            raise ValueError("value and derivative must share one grid")

    @classmethod
    def from_arrays(cls, r_max: float, values, derivs, tail: TailRule = None,
                    deriv_tail: TailRule = None) -> "H1GridFunction":
        values = np.asarray(values, dtype=float)
        n_r = values.size - 1
        return cls(GridFunction(r_max, n_r, values, tail), GridFunction(r_max, n_r, derivs, deriv_tail))

    @classmethod
    def from_callables(cls, fn, dfn, r_max: float, n_r: int, analytic_tail: bool = False) -> "H1GridFunction":
        return cls(
            GridFunction.from_callable(fn, r_max, n_r, analytic_tail),
            GridFunction.from_callable(dfn, r_max, n_r, analytic_tail),
        )

    @property
    def r_max(self) -> float:
        return self.base.r_max

    @property
    def n_r(self) -> int:
        return self.base.n_r

    @property
    def dr(self) -> float:
        return self.base.dr

    @property
    def r(self) -> np.ndarray:
        return self.base.r

    @property
    def values(self) -> np.ndarray:
        return self.base.values

    @property
    def derivs(self) -> np.ndarray:
        return self.deriv.values

    def compatibility_defect(self) -> np.ndarray:
        """Per-cell mismatch f(r_{k+1}) - f(r_k) - trapezoid of f' over the cell."""
        f, fp = self.base.values, self.deriv.values
        return np.diff(f) - 0.5 * self.dr * (fp[1:] + fp[:-1])

    def to_columns(self) -> dict:
        return {"r": self.r, "value": np.array(self.values), "deriv": np.array(self.derivs)}


@dataclass(frozen=True)
class StatePoint:
    """A point (x, z) of the state space: z(0) must equal min(x, 0) exactly."""

    x: float
    z: H1GridFunction

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        if self.z.values[0] != min(self.x, 0.0):
            raise ValueError(
                f"state space membership requires z(0) = min(x, 0) exactly; got z(0)={self.z.values[0]!r}, x={self.x!r}"
            )


@dataclass(frozen=True)
class TimePath:
    """Values of a path at t_i = i * dt, i = 0..n_t."""

    t_max: float
    n_t: int
    values: np.ndarray

    def __post_init__(self):
        if self.n_t <= 0 or not self.t_max > 0:
            raise ValueError("time grid needs t_max > 0 and n_t >= 1")
        vals = _frozen(self.values)
        if vals.shape != (self.n_t + 1,):
            raise ValueError(f"expected {self.n_t + 1} values, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("path values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def dt(self) -> float:
        return self.t_max / self.n_t

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_t + 1) * self.dt

    @classmethod
    def from_callable(cls, fn, t_max: float, n_t: int) -> "TimePath":
        t = np.arange(n_t + 1) * (t_max / n_t)
        return cls(t_max, n_t, np.broadcast_to(np.asarray(fn(t), dtype=float), t.shape))

    @classmethod
    def zeros(cls, t_max: float, n_t: int) -> "TimePath":
        return cls(t_max, n_t, np.zeros(n_t + 1))

    def index(self, t: float) -> int:
        return grid_steps(t, self.dt)

    def __call__(self, t: float) -> float:
        return float(self.values[self.index(t)])

    def to_columns(self) -> dict:
        return {"t": self.t, "value": np.array(self.values)}


# ---------------------------------------------------------------------------
def l2_norm(f: GridFunction) -> float:
    """Trapezoidal approximation of the L2 norm on [0, r_max]."""
    v = np.asarray(f.values)
    return math.sqrt(float(np.dot(trapezoid_weights(f.n_r, f.dr), v * v)))


def h1_norm(f: H1GridFunction) -> float:
    return math.sqrt(l2_norm(f.base) ** 2 + l2_norm(f.deriv) ** 2)


def sup_norm(f: GridFunction) -> float:
    return float(np.max(np.abs(f.values)))


def path_l2_norm(p: TimePath) -> float:
    v = np.asarray(p.values)
    return math.sqrt(float(np.dot(trapezoid_weights(p.n_t, p.dt), v * v)))


def translate(f: H1GridFunction, t: float) -> H1GridFunction:
    """The shifted function r -> f(t + r); t must be a multiple of the grid step."""
    if t < 0:
        raise ValueError("translation requires t >= 0")
    j = grid_steps(t, f.dr)
    if j == 0:
        return f
    return H1GridFunction(f.base.shift_index(j), f.deriv.shift_index(j))


def age_grid(r_max: float, dr: float) -> tuple[int, np.ndarray]:
    n = grid_steps(r_max, dr)
    return n, np.arange(n + 1) * dr


@dataclass(frozen=True)
class SimulationGrid:
    """Shared time/age grid: step dt on [0, t_max] in time and [0, r_max] in age."""

    dt: float
    t_max: float
    r_max: float

    def __post_init__(self):
        if not (self.dt > 0 and self.t_max > 0 and self.r_max > 0):
            raise ValueError("grid parameters must be positive")
        grid_steps(self.t_max, self.dt)
        grid_steps(self.r_max, self.dt)

    @property
    def n_t(self) -> int:
        return grid_steps(self.t_max, self.dt)

    @property
    def n_r(self) -> int:
        return grid_steps(self.r_max, self.dt)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_t + 1) * self.dt

    @property
    def r(self) -> np.ndarray:
        return np.arange(self.n_r + 1) * self.dt

    def refined(self, factor: int) -> "SimulationGrid":
        return SimulationGrid(self.dt / factor, self.t_max, self.r_max)

    @staticmethod
    def aligned_r_max(r_needed: float, dt: float) -> float:
        """Smallest multiple of dt that is >= r_needed."""
        return math.ceil(r_needed / dt - 1e-9) * dt

    def to_dict(self) -> dict:
        return {"dt": self.dt, "t_max": self.t_max, "r_max": self.r_max, "n_t": self.n_t, "n_r": self.n_r}
