"""Brownian motion, space-time white noise and the stochastic integrals built on it.

The white noise lives on age cells [j dt, (j+1) dt) and time steps
[i dt, (i+1) dt).  Cell (j, i) carries a centred Gaussian increment with
variance g(x_j*) dt^2, where x_j* = (j + 1/2) dt is the cell midpoint.
Integrals are Ito sums: the integrand is evaluated at the left end s_i of
each time step, and M_t sums the steps that end by t.

The convolution integrands Psi_{t+r} f(x, s) = f(x + t + r - s) Gbar(x + t + r - s) / Gbar(x)
only depend on the integer lag l = (t + r - s) / dt and the age cell j, so
every stochastic convolution is a contraction of the "transfer" matrix

    A_f[l, i] = sum_j F_f((j + l + 1/2) dt) / Gbar(x_j*) * dM[j, i],

with F_1 = Gbar and F_h = g.  A is a matrix product and is computed once per
noise field.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .distributions import ServiceDistribution
from .function_grid import SimulationGrid, TimePath, grid_steps

STREAM_BROWNIAN = 0
STREAM_NOISE = 1

WEIGHTS = ("one", "h")


def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one (seed, stream) pair."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class BrownianPath:
    """Standard Brownian motion sampled on a time grid."""

    path: TimePath
    seed: int | None = None

    @classmethod
    def generate(cls, t_max: float, dt: float, seed: int) -> "BrownianPath":
        n = grid_steps(t_max, dt)
        inc = make_rng(seed, STREAM_BROWNIAN).standard_normal(n) * math.sqrt(dt)
        return cls(TimePath(t_max, n, np.concatenate([[0.0], np.cumsum(inc)])), seed)

    @classmethod
    def zeros(cls, t_max: float, dt: float) -> "BrownianPath":
        return cls(TimePath.zeros(t_max, grid_steps(t_max, dt)), None)

    @property
    def values(self) -> np.ndarray:
        return self.path.values

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.path.values)

    @property
    def dt(self) -> float:
        return self.path.dt

    def coarsen(self, factor: int) -> "BrownianPath":
        if self.path.n_t % factor:
            raise ValueError("number of steps must be divisible by the coarsening factor")
        vals = self.path.values[::factor]
        return BrownianPath(TimePath(self.path.t_max, self.path.n_t // factor, vals), self.seed)

    def truncate(self, n_t: int) -> "BrownianPath":
        return BrownianPath(TimePath(n_t * self.dt, n_t, self.path.values[: n_t + 1]), self.seed)


@dataclass(frozen=True)
class NoiseField:
    """White-noise increments dM[j, i] on (age cell j) x (time step i)."""

    dt: float
    n_r: int
    n_t: int
    increments: np.ndarray
    seed: int | None = None
    neglected_mass: float = 0.0

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        if inc.shape != (self.n_r, self.n_t):
            raise ValueError(f"increments must have shape {(self.n_r, self.n_t)}")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def r_max(self) -> float:
        return self.n_r * self.dt

    @property
    def t_max(self) -> float:
        return self.n_t * self.dt

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_r) + 0.5) * self.dt

    @classmethod
    def generate(cls, d: ServiceDistribution, grid: SimulationGrid, seed: int) -> "NoiseField":
        """Sample the field; draws are made time step by time step, so a longer
        horizon with the same seed extends a shorter one."""
        n_r, n_t, dt = grid.n_r, grid.n_t, grid.dt
        sd = np.sqrt(d.pdf((np.arange(n_r) + 0.5) * dt)) * dt
        z = make_rng(seed, STREAM_NOISE).standard_normal((n_t, n_r))
        z *= sd
        return cls(dt, n_r, n_t, np.ascontiguousarray(z.T), seed, float(d.ccdf(grid.r_max)))

    @classmethod
    def zeros(cls, grid: SimulationGrid) -> "NoiseField":
        return cls(grid.dt, grid.n_r, grid.n_t, np.zeros((grid.n_r, grid.n_t)), None, 0.0)

    def coarsen(self, factor: int) -> "NoiseField":
        """Aggregate factor x factor blocks of cells (same underlying noise on a coarser grid)."""
        if self.n_r % factor or self.n_t % factor:
            raise ValueError("grid sizes must be divisible by the coarsening factor")
        a = self.increments.reshape(self.n_r // factor, factor, self.n_t // factor, factor)
        return NoiseField(self.dt * factor, self.n_r // factor, self.n_t // factor,
                          a.sum(axis=(1, 3)), self.seed, self.neglected_mass)

    def truncate(self, n_t: int) -> "NoiseField":
        return NoiseField(self.dt, self.n_r, n_t, self.increments[:, :n_t], self.seed, self.neglected_mass)


def integrate(M: NoiseField, phi: Callable[[np.ndarray, np.ndarray], np.ndarray], t: float) -> float:
    """Ito sum of phi(x_j*, s_i) dM[j, i] over the time steps inside [0, t]."""
    n = grid_steps(t, M.dt)
    if n == 0:
        return 0.0
    if n > M.n_t:
        raise ValueError("t exceeds the horizon of the noise field")
    x = M.midpoints[:, None]
    s = (np.arange(n) * M.dt)[None, :]
    vals = np.broadcast_to(np.asarray(phi(x, s), dtype=float), (M.n_r, n))
    return float(np.sum(vals * M.increments[:, :n]))


# ---------------------------------------------------------------------------
class PsiKernel:
    """Distribution tables at half-integer ages used by all Psi/Phi integrands."""

    def __init__(self, d: ServiceDistribution, dt: float, n_r: int):
        self.d = d
        self.dt = dt
        self.n_r = n_r
        self._n = -1
        self._extend(2 * n_r + 1)

    def _extend(self, n: int) -> None:
        if n <= self._n:
            return
        n = max(n, int(1.5 * self._n))
        x = (np.arange(n + 1) + 0.5) * self.dt
        self._log_gbar = self.d.log_ccdf(x)
        self._log_g = np.log(self.d.pdf(x))
        self._n = n

    def numerator(self, weight: str, n: int) -> np.ndarray:
        """F_f((m + 1/2) dt) for m = 0..n: Gbar for weight 'one', g for weight 'h'."""
        self._extend(n)
        if weight == "one":
            return np.exp(self._log_gbar[: n + 1])
        if weight == "h":
            return np.exp(self._log_g[: n + 1])
        raise ValueError(f"weight must be one of {WEIGHTS}")

    def inv_gbar(self) -> np.ndarray:
        return np.exp(-self._log_gbar[: self.n_r])

    def lag_weights(self, weight: str, lags: np.ndarray) -> np.ndarray:
        """W[j, m] = F_f(x_j* + lags[m] dt) / Gbar(x_j*) computed in log space."""
        lags = np.asarray(lags, dtype=int)
        self._extend(self.n_r + int(lags.max(initial=0)) + 1)
        idx = np.arange(self.n_r)[:, None] + lags[None, :]
        top = self._log_gbar[idx] if weight == "one" else self._log_g[idx]
        return np.exp(top - self._log_gbar[: self.n_r, None])

    def psi_weights(self, n: int, k: int, weight: str = "one") -> np.ndarray:
        """Integrand matrix of M_{t_n}(Psi_{t_n + r_k} f) on cells (j, i), i < n."""
        return self.lag_weights(weight, n - np.arange(n) + k)


_KERNELS: "weakref.WeakKeyDictionary[ServiceDistribution, dict]" = weakref.WeakKeyDictionary()


def psi_kernel(d: ServiceDistribution, dt: float, n_r: int) -> PsiKernel:
    cache = _KERNELS.setdefault(d, {})
    key = (round(dt, 15), n_r)
    if key not in cache:
        cache[key] = PsiKernel(d, dt, n_r)
    return cache[key]


class StochasticConvolution:
    """All Psi/Phi stochastic integrals of one noise field for one distribution."""

    def __init__(self, M: NoiseField, d: ServiceDistribution, chunk: int = 512):
        self.M = M
        self.d = d
        self.kernel = psi_kernel(d, M.dt, M.n_r)
        self.chunk = chunk
        self._A: dict[str, np.ndarray] = {}
        self._Y = None

    @property
    def dt(self) -> float:
        return self.M.dt

    def transfer(self, weight: str, n_lags: int) -> np.ndarray:
        """A_f[l, i] for lags l = 0..n_lags (rows) and time steps i (columns)."""
        A = self._A.get(weight)
        if A is not None and A.shape[0] > n_lags:
            return A
        if self._Y is None:
            self._Y = self.M.increments * self.kernel.inv_gbar()[:, None]
        n_r = self.M.n_r
        F = self.kernel.numerator(weight, n_lags + n_r)
        win = sliding_window_view(F, n_r)
        A = np.empty((n_lags + 1, self.M.n_t))
        for lo in range(0, n_lags + 1, self.chunk):
            hi = min(lo + self.chunk, n_lags + 1)
            A[lo:hi] = np.ascontiguousarray(win[lo:hi]) @ self._Y
        self._A[weight] = A
        return A

    def release(self) -> None:
        self._A.clear()
        self._Y = None

    # -- individual values -------------------------------------------------
    def psi(self, n: int, k: int, weight: str = "one") -> float:
        """M_{t_n}(Psi_{t_n + r_k} f)."""
        if n == 0:
            return 0.0
        A = self._A.get(weight)
        if A is not None and A.shape[0] > n + k:
            i = np.arange(n)
            return float(A[n - i + k, i].sum())
        W = self.kernel.psi_weights(n, k, weight)
        return float(np.sum(W * self.M.increments[:, :n]))

    def window(self, i_lo: int, i_hi: int, lag_end: int, weight: str = "one") -> float:
        """Sum over steps i_lo <= i < i_hi of A_f[lag_end - i, i]."""
        if i_hi <= i_lo:
            return 0.0
        i = np.arange(i_lo, i_hi)
        A = self._A.get(weight)
        if A is not None and A.shape[0] > lag_end - i_lo:
            return float(A[lag_end - i, i].sum())
        W = self.kernel.lag_weights(weight, lag_end - i)
        return float(np.sum(W * self.M.increments[:, i_lo:i_hi]))

    def phi_path(self, k: int, weight: str = "one") -> np.ndarray:
        """M_{t_n}(Phi_{r_k} f) for every n = 0..n_t."""
        W = self.kernel.lag_weights(weight, np.array([k]))[:, 0]
        col = W @ self.M.increments
        return np.concatenate([[0.0], np.cumsum(col)])

    def origin_path(self, weight: str = "one") -> np.ndarray:
        """H_{t_n}(f) = M_{t_n}(Psi_{t_n} f) for every n = 0..n_t."""
        return self.sweep(weight, k_paths=[0])["paths"][0]

    def sweep(self, weight: str, snapshots: Iterable[int] = (), n_r_out: int = 0,
              k_paths: Iterable[int] = ()) -> dict:
        """Run the profile recursion P_{n+1}(k) = P_n(k+1) + A[k+1, n].

        Returns profiles P_n(0..n_r_out) at the requested snapshot indices and
        time paths n -> P_n(k) for the requested k.
        """
        snapshots = sorted(set(int(s) for s in snapshots))
        k_paths = [int(k) for k in k_paths]
        n_end = max(snapshots + [0]) if not k_paths else self.M.n_t
        k_top = max([n_r_out] + k_paths)
        n_lags = n_end + k_top
        A = self.transfer(weight, n_lags)
        P = np.zeros(n_lags + 1)
        paths = np.zeros((len(k_paths), n_end + 1))
        profiles = {}
        if 0 in snapshots:
            profiles[0] = np.zeros(n_r_out + 1)
        for n in range(n_end):
            P = P[1:] + A[1 : P.size, n]
            for row, k in enumerate(k_paths):
                paths[row, n + 1] = P[k]
            if n + 1 in snapshots:
                profiles[n + 1] = P[: n_r_out + 1].copy()
        return {"profiles": profiles, "paths": paths}


def stoch_conv(M: NoiseField, d: ServiceDistribution, t: float, r: float, weight: str = "one") -> float:
    """M_t(Psi_{t+r} f) with f = 1 (weight 'one') or f = h (weight 'h')."""
    if weight not in WEIGHTS:
        raise ValueError(f"weight must be one of {WEIGHTS}")
    n = grid_steps(t, M.dt)
    k = grid_steps(r, M.dt)
    if n > M.n_t:
        raise ValueError("t exceeds the horizon of the noise field")
    return StochasticConvolution(M, d).psi(n, k, weight)


def fubini_residual_path(M: NoiseField, d: ServiceDistribution, k: int,
                         conv: StochasticConvolution | None = None) -> np.ndarray:
    """Residual of M_t(Psi_{t+r} 1) = M_t(Phi_r 1) - int_0^t M_s(Psi_{s+r} h) ds for all grid t.

    The ds-integral uses the cumulative trapezoid rule.
    """
    conv = conv or StochasticConvolution(M, d)
    lhs = conv.sweep("one", k_paths=[k])["paths"][0]
    inner = conv.sweep("h", k_paths=[k])["paths"][0]
    cum = np.zeros_like(inner)
    cum[1:] = np.cumsum(0.5 * M.dt * (inner[1:] + inner[:-1]))
    return lhs - conv.phi_path(k, "one") + cum


def fubini_residual(M: NoiseField, d: ServiceDistribution, t: float, r: float) -> float:
    n = grid_steps(t, M.dt)
    if n == 0:
        return 0.0
    return float(fubini_residual_path(M, d, grid_steps(r, M.dt))[n])


