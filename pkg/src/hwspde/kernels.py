"""Deterministic integral-equation machinery on uniform time grids.

All time integrals use the composite trapezoidal rule with weights
``trapezoid_weights``.  The convolution of two grid sequences is

    (f * g)(t_n) ~ dt * sum_{j=0}^{n} w_j f(t_n - t_j) g(t_j),

with half weights at both ends.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import signal

from .distributions import ServiceDistribution
from .function_grid import H1GridFunction, TimePath, grid_steps, trapezoid_weights

Kernel = Union[Callable[[np.ndarray], np.ndarray], np.ndarray]

_TABLES: "weakref.WeakKeyDictionary[ServiceDistribution, dict]" = weakref.WeakKeyDictionary()


def grid_table(d: ServiceDistribution, dt: float, n: int) -> dict:
    """Gbar, g and g' at k * dt for k = 0..n (cached per distribution and step)."""
    cache = _TABLES.setdefault(d, {})
    key = round(dt, 15)
    tab = cache.get(key)
    if tab is None or tab["n"] < n:
        m = max(n, 2 * tab["n"] if tab else n)
        x = np.arange(m + 1) * dt
        tab = {"n": m, "gbar": d.ccdf(x), "g": d.pdf(x), "dg": d.dpdf(x)}
        for k in ("gbar", "g", "dg"):
            tab[k].setflags(write=False)
        cache[key] = tab
    return {k: (v[: n + 1] if k != "n" else n) for k, v in tab.items()}


def _kernel_values(kernel: Kernel, n: int, dt: float) -> np.ndarray:
    if callable(kernel):
        return np.asarray(kernel(np.arange(n + 1) * dt), dtype=float)
    arr = np.asarray(kernel, dtype=float)
    if arr.shape[-1] < n + 1:
        raise ValueError("kernel array shorter than the path")
    return arr[..., : n + 1]


def trap_conv(f: np.ndarray, g: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoidal convolution of sequences along the last axis.

    ``f`` may be a batch (2-D); ``g`` is a single kernel sequence.
    """
    f = np.asarray(f, dtype=float)
    n1 = f.shape[-1]
    g = np.asarray(g, dtype=float)[:n1]
    if f.ndim == 1:
        full = np.convolve(f, g)[:n1]
    else:
        full = signal.fftconvolve(f, g[None, :], axes=-1)[..., :n1]
    out = dt * (full - 0.5 * (f * g[0] + f[..., :1] * g))
    out[..., 0] = 0.0
    return out


def trap_cumint(f: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative trapezoid integral along the last axis, zero at t=0."""
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(f)
    out[..., 1:] = np.cumsum(0.5 * dt * (f[..., 1:] + f[..., :-1]), axis=-1)
    return out


def convolve(f: TimePath, g_kernel: Kernel) -> TimePath:
    """Trapezoidal (f * g)(t_i) on the grid of ``f``; zero at t=0."""
    gk = _kernel_values(g_kernel, f.n_t, f.dt)
    return TimePath(f.t_max, f.n_t, trap_conv(f.values, gk, f.dt))


# ---------------------------------------------------------------------------
def solve_linear_volterra(f: np.ndarray, gk: np.ndarray, dt: float) -> np.ndarray:
    """Solve phi = f + (g * phi) with the trapezoidal rule by time stepping.

    The endpoint term is linear in phi(t_n), so each step is solved exactly.
    """
    f = np.asarray(f, dtype=float)
    batch = f.ndim == 2
    F = np.atleast_2d(f)
    n1 = F.shape[1]
    phi = np.empty_like(F)
    phi[:, 0] = F[:, 0]
    denom = 1.0 - 0.5 * dt * gk[0]
    for n in range(1, n1):
        acc = phi[:, :n] @ gk[n:0:-1] - 0.5 * gk[n] * phi[:, 0]
        phi[:, n] = (F[:, n] + dt * acc) / denom
    return phi if batch else phi[0]


def renewal_density(d: ServiceDistribution, t_max: float, dt: float) -> TimePath:
    """Renewal density u solving u = g + g * u, with u(0) = g(0)."""
    n = grid_steps(t_max, dt)
    gk = grid_table(d, dt, n)["g"]
    return TimePath(t_max, n, solve_linear_volterra(gk, gk, dt))


_U_CACHE: "weakref.WeakKeyDictionary[ServiceDistribution, dict]" = weakref.WeakKeyDictionary()


def _cached_u(d: ServiceDistribution, t_max: float, dt: float) -> TimePath:
    cache = _U_CACHE.setdefault(d, {})
    key = (round(dt, 15), round(t_max, 12))
    if key not in cache:
        cache[key] = renewal_density(d, t_max, dt)
    return cache[key]


@dataclass(frozen=True)
class RenewalSolution:
    """Solution phi* = f + u * f of the renewal equation phi = f + g * phi."""

    phi: TimePath
    u_minus_one_l1: float
    c1: float
    c2: float
    residual: float
    tail_estimate: float
    truncation_dominates: bool


def u_minus_one_l1(u: TimePath) -> tuple[float, float]:
    """Truncated L1 norm of u - 1 and an estimate of the neglected remainder.

    The remainder beyond t_max is estimated as |u(t_max) - 1| * t_max.
    """
    dev = np.abs(np.asarray(u.values) - 1.0)
    body = float(np.dot(trapezoid_weights(u.n_t, u.dt), dev))
    return body, float(dev[-1] * u.t_max)


def renewal_apply(f: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """phi* = f + (u * f) for a single path or a batch along the last axis."""
    return f + trap_conv(f, u, dt)


def solve_renewal(f: TimePath, d: ServiceDistribution, u: TimePath | None = None) -> RenewalSolution:
    """Solve phi = f + g * phi through the renewal density: phi* = f + u * f."""
    if u is None:
        u = _cached_u(d, f.t_max, f.dt)
    if u.n_t != f.n_t or not math.isclose(u.dt, f.dt):
        raise ValueError("renewal density and input must share one grid")
    fv = np.asarray(f.values)
    phi = renewal_apply(fv, u.values, f.dt)
    gk = grid_table(d, f.dt, f.n_t)["g"]
    resid = float(np.max(np.abs(phi - fv - trap_conv(phi, gk, f.dt))))
    body, tail = u_minus_one_l1(u)
    l1 = body + tail
    return RenewalSolution(
        phi=TimePath(f.t_max, f.n_t, phi),
        u_minus_one_l1=l1,
        c1=1.0 + l1,
        c2=1.0,
        residual=resid,
        tail_estimate=tail,
        truncation_dominates=bool(tail > body),
    )


# ---------------------------------------------------------------------------
def volterra_plus_array(r: np.ndarray, gk: np.ndarray, dt: float) -> np.ndarray:
    """Solve x = r + (g * x^+) by trapezoidal time stepping.

    At each step the unknown enters only through the endpoint term
    0.5 * dt * g(0) * x(t_n)^+, so the scalar equation x = a + c x^+ with
    0 <= c < 1 is solved in closed form: x = a / (1 - c) if a > 0 else a.
    Works on a single path or on a batch of paths (rows).
    """
    r = np.asarray(r, dtype=float)
    batch = r.ndim == 2
    R = np.atleast_2d(r)
    n1 = R.shape[1]
    x = np.empty_like(R)
    xp = np.zeros_like(R)
    x[:, 0] = R[:, 0]
    xp[:, 0] = np.maximum(R[:, 0], 0.0)
    c = 0.5 * dt * gk[0]
    if c >= 1.0:
        raise ValueError("time step too large: dt * g(0) / 2 must be below 1")
    for n in range(1, n1):
        acc = xp[:, :n] @ gk[n:0:-1] - 0.5 * gk[n] * xp[:, 0]
        a = R[:, n] + dt * acc
        xn = np.where(a > 0, a / (1.0 - c), a)
        x[:, n] = xn
        xp[:, n] = np.maximum(xn, 0.0)
    return x if batch else x[0]


def solve_volterra_plus(r_path: TimePath, d: ServiceDistribution) -> TimePath:
    """Solve x(t) = r(t) + int_0^t g(t - s) x^+(s) ds on the grid of ``r_path``."""
    gk = grid_table(d, r_path.dt, r_path.n_t)["g"]
    return TimePath(r_path.t_max, r_path.n_t, volterra_plus_array(r_path.values, gk, r_path.dt))


# ---------------------------------------------------------------------------
def memory_integral(f: np.ndarray, n: int, dt: float, table: np.ndarray, n_r: int) -> np.ndarray:
    """int_0^t f(s) k(t + r - s) ds at t = n dt for r_k = k dt, k = 0..n_r.

    ``table`` holds the kernel k at j * dt for j = 0..n + n_r.
    """
    if n == 0:
        return np.zeros(n_r + 1)
    v = (trapezoid_weights(n, dt) * np.asarray(f, dtype=float)[: n + 1])[::-1]
    return signal.correlate(np.asarray(table[: n + n_r + 1]), v, mode="valid")


def gamma_arrays(kappa: np.ndarray, n: int, dt: float, d: ServiceDistribution, n_r: int,
                 derivative: bool = True) -> tuple[np.ndarray, np.ndarray | None]:
    """Values (and r-derivatives) of Gamma_t kappa at t = n dt on r_k = k dt, k = 0..n_r.

    Gamma_t kappa(r) = Gbar(r) kappa(t) - int_0^t kappa(s) g(t + r - s) ds.
    """
    kappa = np.asarray(kappa, dtype=float)
    tab = grid_table(d, dt, n + n_r)
    kn = kappa[n]
    val = tab["gbar"][: n_r + 1] * kn
    der = -tab["g"][: n_r + 1] * kn if derivative else None
    if n > 0:
        val = val - memory_integral(kappa, n, dt, tab["g"], n_r)
        if derivative:
            der = der - memory_integral(kappa, n, dt, tab["dg"], n_r)
    return val, der


def gamma_op(kappa: TimePath, t: float, d: ServiceDistribution, r_max: float) -> H1GridFunction:
    """Gamma_t kappa on the age grid [0, r_max] with step equal to the time step."""
    n = kappa.index(t)
    n_r = grid_steps(r_max, kappa.dt)
    val, der = gamma_arrays(kappa.values, n, kappa.dt, d, n_r)
    return H1GridFunction.from_arrays(r_max, val, der)
