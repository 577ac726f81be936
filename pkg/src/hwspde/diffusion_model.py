"""The explicit diffusion model (X, Z) built from Brownian motion and white noise.

Construction on a grid with common step dt in time and age:

* E(t) = sigma B(t) - beta t,
* (K, X) = CMS(E, X0, Z0 - H(1)) with H_t(1) the stochastic convolution at r = 0,
* Z(t, r) = Z0(t + r) - M_t(Psi_{t+r} 1) + Gamma_t K(r),
* d/dr Z(t, r) = Z0'(t + r) + M_t(Psi_{t+r} h) - g(r) K(t) - int_0^t K(s) g'(t + r - s) ds.

The CMS map is discretised so that the first CMS equation holds exactly for
the same trapezoidal quadrature that builds Gamma_t K; the boundary identity
Z(t, 0) = min(X(t), 0) therefore holds to rounding error.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .distributions import ServiceDistribution
from .function_grid import (
    GridFunction,
    H1GridFunction,
    SimulationGrid,
    StatePoint,
    TimePath,
    grid_steps,
    h1_norm,
    trapezoid_weights,
)
from .kernels import gamma_arrays, grid_table, trap_conv, trap_cumint, volterra_plus_array
from .noise import BrownianPath, NoiseField, StochasticConvolution

CMS_START_TOL = 1e-9


# ---------------------------------------------------------------------------
def canonical_state(x0: float, d: ServiceDistribution, r_max: float, dt: float,
                    perturbation: tuple[Callable, Callable] | None = None) -> StatePoint:
    """State (x0, z0) with z0(r) = min(x0, 0) Gbar(r) + p(r), p(0) = 0.

    ``perturbation`` is a pair (p, p') of vectorised callables.  The state
    carries an analytic tail so that z0(t + r) is available beyond r_max.
    """
    x0 = float(x0)
    a = min(x0, 0.0)
    if perturbation is None:
        p = dp = (lambda r: np.zeros_like(np.asarray(r, dtype=float)))  # noqa: E731
    else:
        p, dp = perturbation
        if abs(float(np.asarray(p(np.array([0.0])))[0])) > 1e-14:
            raise ValueError("perturbation must vanish at r = 0")

    def z(r):
        r = np.asarray(r, dtype=float)
        return a * d.ccdf(r) + p(r)

    def dz(r):
        r = np.asarray(r, dtype=float)
        return -a * d.pdf(r) + dp(r)

    n_r = grid_steps(r_max, dt)
    vals = np.array(z(np.arange(n_r + 1) * dt), dtype=float)
    vals[0] = a
    derivs = dz(np.arange(n_r + 1) * dt)
    zf = H1GridFunction.from_arrays(r_max, vals, derivs, tail=z, deriv_tail=dz)
    return StatePoint(x0, zf)


def bump_perturbation(amplitudes: Sequence[float], rates: Sequence[float]) -> tuple[Callable, Callable]:
    """p(r) = sum_i a_i r exp(-b_i r), an H1 function with p(0) = 0."""
    amps = np.asarray(amplitudes, dtype=float)
    rates = np.asarray(rates, dtype=float)

    def p(r):
        r = np.asarray(r, dtype=float)[..., None]
        return np.sum(amps * r * np.exp(-rates * r), axis=-1)

    def dp(r):
        r = np.asarray(r, dtype=float)[..., None]
        return np.sum(amps * (1.0 - rates * r) * np.exp(-rates * r), axis=-1)

    return p, dp


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CMSResult:
    kappa: TimePath
    x: TimePath
    residual_first: float
    residual_second: float


def cms_arrays(eta: np.ndarray, x0, zeta: np.ndarray, gk: np.ndarray, dt: float):
    """CMS map on arrays; rows of a 2-D input are independent paths.

    Builds r = zeta + eta + x0^+ - g*(eta + x0^+) (the Gbar(t) x0^+ term is
    written as x0^+ minus the same trapezoidal g-integral, which keeps the
    discrete map consistent), solves x = r + g*x^+ and returns (kappa, x).
    """
    eta = np.asarray(eta, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    x0p = np.maximum(x0, 0.0)[..., None] if eta.ndim == 2 else max(float(x0), 0.0)
    shifted = eta + x0p
    r = zeta + shifted - trap_conv(shifted, gk, dt)
    x = volterra_plus_array(r, gk, dt)
    kappa = eta - np.maximum(x, 0.0) + x0p
    return kappa, x


def cms_map(eta: TimePath, x0: float, zeta: TimePath, d: ServiceDistribution) -> CMSResult:
    """Centred many-server map (eta, x0, zeta) -> (kappa, x)."""
    if eta.n_t != zeta.n_t or not math.isclose(eta.dt, zeta.dt):
        raise ValueError("eta and zeta must share one time grid")
    if eta.values[0] != 0.0:
        raise ValueError("eta must start at 0")
    if abs(zeta.values[0] - min(x0, 0.0)) > CMS_START_TOL:
        raise ValueError("zeta(0) must equal min(x0, 0)")
    zv = np.array(zeta.values)
    zv[0] = min(x0, 0.0)
    gk = grid_table(d, eta.dt, eta.n_t)["g"]
    kappa, x = cms_arrays(eta.values, x0, zv, gk, eta.dt)
    res1 = np.max(np.abs(np.minimum(x, 0.0) - (zv + kappa - trap_conv(kappa, gk, eta.dt))))
    res2 = np.max(np.abs(kappa - (eta.values - np.maximum(x, 0.0) + max(x0, 0.0))))
    return CMSResult(TimePath(eta.t_max, eta.n_t, kappa), TimePath(eta.t_max, eta.n_t, x), float(res1), float(res2))


# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class DiffusionPath:
    """One realisation of the diffusion model on a grid."""

    d: ServiceDistribution
    sigma: float
    beta: float
    y0: StatePoint
    B: BrownianPath
    M: NoiseField
    E: TimePath
    X: TimePath
    K: TimePath
    H1: np.ndarray
    snapshot_index: np.ndarray
    Z_values: np.ndarray
    Z_derivs: np.ndarray
    cms_residuals: tuple[float, float]
    conv: StochasticConvolution = field(repr=False)
    z0_ext: np.ndarray = field(repr=False)
    dz0_ext: np.ndarray = field(repr=False)

    @property
    def dt(self) -> float:
        return self.M.dt

    @property
    def n_t(self) -> int:
        return self.X.n_t

    @property
    def n_r(self) -> int:
        return self.M.n_r

    @property
    def r_max(self) -> float:
        return self.M.r_max

    @property
    def Z(self) -> dict:
        """Snapshots as {grid time: H1GridFunction}."""
        return {float(n * self.dt): self.snapshot(int(n)) for n in self.snapshot_index}

    def snapshot(self, n: int) -> H1GridFunction:
        pos = np.searchsorted(self.snapshot_index, n)
        if pos >= self.snapshot_index.size or self.snapshot_index[pos] != n:
            raise KeyError(f"no snapshot stored at step {n}")
        return H1GridFunction(
            GridFunction(self.r_max, self.n_r, self.Z_values[pos]),
            GridFunction(self.r_max, self.n_r, self.Z_derivs[pos]),
        )

    def snapshot_at(self, t: float) -> H1GridFunction:
        return self.snapshot(grid_steps(t, self.dt))

    # traces at r = 0 -----------------------------------------------------
    def z_origin_trace(self) -> np.ndarray:
        """Z(t_n, 0) for every n from the defining formula (not from X)."""
        tab = grid_table(self.d, self.dt, self.n_t)
        K = np.asarray(self.K.values)
        return self.z0_ext[: self.n_t + 1] - self.H1 + K - trap_conv(K, tab["g"], self.dt)

    def boundary_defect(self) -> float:
        """max_t |Z(t, 0) - min(X(t), 0)| over all grid times and stored snapshots."""
        xm = np.minimum(self.X.values, 0.0)
        trace = np.max(np.abs(self.z_origin_trace() - xm))
        snaps = np.max(np.abs(self.Z_values[:, 0] - xm[self.snapshot_index])) if self.snapshot_index.size else 0.0
        return float(max(trace, snaps))

    def R_path(self) -> np.ndarray:
        """d/dr Z(t, 0) = z0'(t) + H_t(h) - g(0) K(t) - int_0^t K(s) g'(t - s) ds."""
        tab = grid_table(self.d, self.dt, self.n_t)
        K = np.asarray(self.K.values)
        Hh = self.conv.origin_path("h")
        return self.dz0_ext[: self.n_t + 1] + Hh - tab["g"][0] * K - trap_conv(K, tab["dg"], self.dt)

    def z_point(self, n: int, k: int) -> tuple[float, float]:
        """(Z(t_n, r_k), d/dr Z(t_n, r_k)) evaluated directly at one point."""
        val, der = self._gamma_point(np.asarray(self.K.values), n, k)
        z0, dz0 = self._z0(n + k)
        return (z0 - self.conv.psi(n, k, "one") + val, dz0 + self.conv.psi(n, k, "h") + der)

    def _z0(self, m: int) -> tuple[float, float]:
        if m < self.z0_ext.size:
            return float(self.z0_ext[m]), float(self.dz0_ext[m])
        z = self.y0.z
        return (float(z.base.extended(m)[m]), float(z.deriv.extended(m)[m]))

    def _gamma_point(self, kappa: np.ndarray, n: int, k: int) -> tuple[float, float]:
        tab = grid_table(self.d, self.dt, n + k)
        if n == 0:
            return float(tab["gbar"][k] * kappa[0]), float(-tab["g"][k] * kappa[0])
        w = trapezoid_weights(n, self.dt) * kappa[: n + 1]
        lags = n - np.arange(n + 1) + k
        val = tab["gbar"][k] * kappa[n] - float(np.dot(w, tab["g"][lags]))
        der = -tab["g"][k] * kappa[n] - float(np.dot(w, tab["dg"][lags]))
        return float(val), float(der)


def _snapshot_indices(n_t: int, stride: int | None, snapshots: Iterable[float] | None, dt: float) -> np.ndarray:
    idx: set[int] = set()
    if snapshots is not None:
        idx.update(grid_steps(t, dt) for t in snapshots)
    elif stride:
        idx.update(range(0, n_t + 1, stride))
        idx.add(n_t)
    out = np.array(sorted(idx), dtype=int)
    if out.size and (out[0] < 0 or out[-1] > n_t):
        raise ValueError("snapshot time outside the horizon")
    return out


def build_diffusion(y0: StatePoint, B: BrownianPath, M: NoiseField, d: ServiceDistribution,
                    sigma: float, beta: float, snapshot_stride: int | None = 10,
                    snapshots: Iterable[float] | None = None, allow_nonpositive_beta: bool = False,
                    conv: StochasticConvolution | None = None) -> DiffusionPath:
    """Build (X, K, Z) from an initial state, Brownian motion and white noise.

    Z snapshots are stored every ``snapshot_stride`` steps, or at the grid
    times listed in ``snapshots`` (an empty list stores none).
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not beta > 0 and not allow_nonpositive_beta:
        raise ValueError("beta must be positive (pass allow_nonpositive_beta to override)")
    dt = M.dt
    if not math.isclose(B.dt, dt, rel_tol=1e-12) or not math.isclose(y0.z.dr, dt, rel_tol=1e-12):
        raise ValueError("Brownian path, noise and initial state must share the grid step")
    n_t = B.path.n_t
    if M.n_t < n_t:
        raise ValueError("noise field horizon shorter than the Brownian path")
    if M.n_t > n_t:
        M = M.truncate(n_t)
    if y0.z.n_r != M.n_r:
        raise ValueError("initial state and noise must share the age grid")
    n_r = M.n_r
    t = np.arange(n_t + 1) * dt
    E = sigma * np.asarray(B.values) - beta * t
    conv = conv if conv is not None and conv.M is M else StochasticConvolution(M, d)

    snap = _snapshot_indices(n_t, snapshot_stride, snapshots, dt)
    sweep = conv.sweep("one", snapshots=snap, n_r_out=n_r if snap.size else 0, k_paths=[0])
    H1 = sweep["paths"][0]

    z0_ext = y0.z.base.extended(n_t + n_r)
    dz0_ext = y0.z.deriv.extended(n_t + n_r)
    zeta = z0_ext[: n_t + 1] - H1
    zeta[0] = min(y0.x, 0.0)

    tab = grid_table(d, dt, n_t + n_r)
    gk = tab["g"][: n_t + 1]
    kappa, x = cms_arrays(E, y0.x, zeta, gk, dt)
    res1 = float(np.max(np.abs(np.minimum(x, 0.0) - (zeta + kappa - trap_conv(kappa, gk, dt)))))
    res2 = float(np.max(np.abs(kappa - (E - np.maximum(x, 0.0) + max(y0.x, 0.0)))))

    Zv = np.empty((snap.size, n_r + 1))
    Zd = np.empty((snap.size, n_r + 1))
    if snap.size:
        prof_h = conv.sweep("h", snapshots=snap, n_r_out=n_r)["profiles"]
        for row, n in enumerate(snap):
            gv, gd = gamma_arrays(kappa, int(n), dt, d, n_r)
            Zv[row] = z0_ext[n : n + n_r + 1] - sweep["profiles"][int(n)] + gv
            Zd[row] = dz0_ext[n : n + n_r + 1] + prof_h[int(n)] + gd
    Zv.setflags(write=False)
    Zd.setflags(write=False)
    H1.setflags(write=False)
    return DiffusionPath(
        d=d, sigma=float(sigma), beta=float(beta), y0=y0, B=B, M=M,
        E=TimePath(B.path.t_max, n_t, E), X=TimePath(B.path.t_max, n_t, x),
        K=TimePath(B.path.t_max, n_t, kappa), H1=H1, snapshot_index=snap,
        Z_values=Zv, Z_derivs=Zd, cms_residuals=(res1, res2), conv=conv,
        z0_ext=z0_ext, dz0_ext=dz0_ext,
    )


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SPDEResidualPaths:
    """Residuals of the integrated SPDE form for every grid time at one age r_k."""

    k: int
    res_z: np.ndarray
    res_x: np.ndarray
    int_quadrature: np.ndarray
    int_closed_form: np.ndarray


def spde_residual_paths(path: DiffusionPath, k: int) -> SPDEResidualPaths:
    """Left-minus-right of

        Z(t, r) = Z0(r) + int_0^t d/dr Z(s, r) ds - M_t(Phi_r 1) + Gbar(r) K(t),
        X(t) = X0 + sigma B(t) - beta t - M_t(1) + int_0^t d/dr Z(s, 0) ds,

    with the ds-integrals taken by the trapezoidal rule over the stored
    derivative formula.  The closed form of int_0^t d/dr Z(s, r) ds is
    returned alongside for comparison.
    """
    dt, n_t = path.dt, path.n_t
    tab = grid_table(path.d, dt, n_t + k + 1)
    K = np.asarray(path.K.values)
    conv = path.conv
    P1 = conv.sweep("one", k_paths=sorted({0, k}))["paths"]
    Ph = conv.sweep("h", k_paths=sorted({0, k}))["paths"]
    row = lambda kk: 0 if kk == 0 else 1  # noqa: E731

    def z_and_dz(kk: int):
        z0 = path.z0_ext[kk : kk + n_t + 1] if kk + n_t < path.z0_ext.size else path.y0.z.base.extended(kk + n_t)[kk:]
        dz0 = path.dz0_ext[kk : kk + n_t + 1] if kk + n_t < path.dz0_ext.size else path.y0.z.deriv.extended(kk + n_t)[kk:]
        zval = z0 - P1[row(kk)] + tab["gbar"][kk] * K - trap_conv(K, tab["g"][kk:], dt)
        dval = dz0 + Ph[row(kk)] - tab["g"][kk] * K - trap_conv(K, tab["dg"][kk:], dt)
        return z0, zval, dval

    z0k, Zk, dZk = z_and_dz(k)
    _, _, dZ0 = z_and_dz(0)
    int_q = trap_cumint(dZk, dt)
    phi_k = conv.phi_path(k, "one")
    res_z = Zk - (z0k[0] + int_q - phi_k + tab["gbar"][k] * K)
    res_z[0] = Zk[0] - z0k[0] - tab["gbar"][k] * K[0]
    t = np.arange(n_t + 1) * dt
    m1 = conv.phi_path(0, "one")
    res_x = np.asarray(path.X.values) - (
        path.y0.x + path.sigma * np.asarray(path.B.values) - path.beta * t - m1 + trap_cumint(dZ0, dt)
    )
    closed = z0k - z0k[0] + phi_k - P1[row(k)] - trap_conv(K, tab["g"][k:], dt)
    return SPDEResidualPaths(k, res_z, res_x, int_q, closed)


def spde_residual(path: DiffusionPath, t: float, r: float) -> tuple[float, float]:
    """(res_z, res_x) of the integrated SPDE form at (t, r)."""
    n = grid_steps(t, path.dt)
    k = grid_steps(r, path.dt)
    if n == 0:
        return (0.0, 0.0)
    rp = spde_residual_paths(path, k)
    return float(rp.res_z[n]), float(rp.res_x[n])


# ---------------------------------------------------------------------------
def transport_solution(F: TimePath, d: ServiceDistribution, t: float, r_max: float) -> tuple[H1GridFunction, float]:
    """xi(t, .) = Gamma_t F and the residual of xi(t, r) = int_0^t d/dr xi(s, r) ds + Gbar(r) F(t)."""
    if F.values[0] != 0.0:
        raise ValueError("transport data must satisfy F(0) = 0")
    n = F.index(t)
    dt = F.dt
    n_r = grid_steps(r_max, dt)
    fv = np.asarray(F.values)
    val, der = gamma_arrays(fv, n, dt, d, n_r)
    xi = H1GridFunction.from_arrays(r_max, val, der)
    if n == 0:
        return xi, float(np.max(np.abs(val - d.ccdf(xi.r) * fv[0])))
    ders = np.empty((n + 1, n_r + 1))
    for m in range(n + 1):
        ders[m] = gamma_arrays(fv, m, dt, d, n_r)[1]
    integral = trapezoid_weights(n, dt) @ ders
    resid = val - integral - grid_table(d, dt, n_r)["gbar"] * fv[n]
    return xi, float(np.max(np.abs(resid)))


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MarkovShiftReport:
    res_zshift: float
    res_lambda: float
    res_kappa: float
    gamma_telescoping: float


def markov_shift_check(path: DiffusionPath, s: float, t: float, r: float) -> tuple[float, float]:
    """(res_zshift, res_lambda) for the Markov shift identities at (s, t, r)."""
    rep = markov_shift_report(path, s, t, r)
    return rep.res_zshift, rep.res_lambda


def markov_shift_report(path: DiffusionPath, s: float, t: float, r: float) -> MarkovShiftReport:
    dt = path.dt
    ns, nt, k = grid_steps(s, dt), grid_steps(t, dt), grid_steps(r, dt)
    if ns + nt > path.n_t:
        raise ValueError("s + t exceeds the horizon")
    K = np.asarray(path.K.values)
    conv = path.conv

    z_st, _ = path.z_point(ns + nt, k)
    z_s, _ = path.z_point(ns, nt + k)
    thetaK = K[ns : ns + nt + 1] - K[ns]
    g_theta, _ = path._gamma_point(thetaK, nt, k)
    theta_H = conv.window(ns, ns + nt, ns + nt + k, "one")
    res_z = z_st - (z_s + g_theta - theta_H)

    g_full, _ = path._gamma_point(K, ns + nt, k)
    g_part, _ = path._gamma_point(K, ns, nt + k)
    telescoping = g_theta - (g_full - g_part)

    # re-solve the CMS map from the state at time s
    if nt == 0:
        return MarkovShiftReport(float(res_z), 0.0, 0.0, float(telescoping))
    z_prof = np.array([path.z_point(ns, v)[0] for v in range(nt + 1)]) if nt <= 50 else _z_profile(path, ns, nt)
    theta_H1 = np.array([conv.window(ns, ns + v, ns + v, "one") for v in range(nt + 1)])
    xs = float(path.X.values[ns])
    zeta = z_prof - theta_H1
    zeta[0] = min(xs, 0.0)
    eta = np.asarray(path.E.values[ns : ns + nt + 1]) - path.E.values[ns]
    gk = grid_table(path.d, dt, nt)["g"]
    kappa2, x2 = cms_arrays(eta, xs, zeta, gk, dt)
    res_l = float(np.max(np.abs(np.asarray(path.X.values[ns : ns + nt + 1]) - x2)))
    res_k = float(np.max(np.abs(thetaK - kappa2)))
    return MarkovShiftReport(float(res_z), res_l, res_k, float(telescoping))


def _z_profile(path: DiffusionPath, ns: int, nv: int) -> np.ndarray:
    """Z(t_ns, r_v) for v = 0..nv through one profile sweep."""
    prof = path.conv.sweep("one", snapshots=[ns], n_r_out=nv)["profiles"][ns]
    gv, _ = gamma_arrays(np.asarray(path.K.values), ns, path.dt, path.d, nv, derivative=False)
    z0 = path.y0.z.base.extended(ns + nv)[ns : ns + nv + 1]
    return z0 - prof + gv


# ---------------------------------------------------------------------------
@dataclass
class StationaryConfig:
    d: ServiceDistribution
    sigma: float = 1.0
    beta: float = 0.5
    dt: float = 0.02
    t_max: float = 5.0
    r_max: float | None = None
    reps: int = 200
    seed: int = 0
    x0: float = 0.0
    perturbation: tuple[Callable, Callable] | None = None
    burn_in: float = 0.5
    threads: int = 1


@dataclass(frozen=True)
class StationaryEstimate:
    x_T: np.ndarray
    z_norm_T: np.ndarray
    z0_T: np.ndarray
    x_time_avg: np.ndarray
    seeds: np.ndarray
    boundary_max: float

    def summary(self) -> dict:
        out = {}
        for name in ("x_T", "z_norm_T", "z0_T", "x_time_avg"):
            v = getattr(self, name)
            n = v.size
            m = float(v.mean())
            var = float(v.var(ddof=1)) if n > 1 else 0.0
            out[name] = {
                "mean": m,
                "mean_se": math.sqrt(var / n) if n > 1 else math.nan,
                "var": var,
                "var_se": _var_se(v) if n > 3 else math.nan,
            }
        out["p_x_positive"] = float(np.mean(self.x_T > 0))
        out["reps"] = int(self.x_T.size)
        out["boundary_max"] = self.boundary_max
        return out


def _var_se(v: np.ndarray) -> float:
    """Standard error of the sample variance from the fourth central moment."""
    n = v.size
    c = v - v.mean()
    m2 = np.mean(c**2)
    m4 = np.mean(c**4)
    return float(math.sqrt(max(m4 - (n - 3) / (n - 1) * m2**2, 0.0) / n))


def replication_seed(base: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(base), int(rep)]).generate_state(1, np.uint32)[0])


def default_r_max(d: ServiceDistribution, dt: float, tail: float = 1e-6) -> float:
    return SimulationGrid.aligned_r_max(d.tail_quantile(tail), dt)


def _one_stationary(cfg: StationaryConfig, r_max: float, seed: int):
    grid = SimulationGrid(cfg.dt, cfg.t_max, r_max)
    y0 = canonical_state(cfg.x0, cfg.d, r_max, cfg.dt, cfg.perturbation)
    B = BrownianPath.generate(cfg.t_max, cfg.dt, seed)
    M = NoiseField.generate(cfg.d, grid, seed)
    p = build_diffusion(y0, B, M, cfg.d, cfg.sigma, cfg.beta, snapshots=[cfg.t_max])
    zT = p.snapshot(grid.n_t)
    x = np.asarray(p.X.values)
    start = int(math.floor(cfg.burn_in * grid.n_t))
    return float(x[-1]), h1_norm(zT), float(zT.values[0]), float(x[start:].mean()), p.boundary_defect()


def simulate_x_batch(d: ServiceDistribution, x0: float, sigma: float, beta: float, dt: float, t_max: float,
                     seeds: Sequence[int], r_max: float | None = None,
                     perturbation: tuple[Callable, Callable] | None = None,
                     batch: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Paths of (B, X) for many seeds without materialising Z.

    Only H_t(1) is needed for X, so each replication contracts the noise with
    lags up to n_t only.  Row i uses exactly the noise of ``seeds[i]``, so it
    matches ``build_diffusion`` on the same seed.
    """
    r_max = r_max if r_max is not None else default_r_max(d, dt)
    grid = SimulationGrid(dt, t_max, r_max)
    y0 = canonical_state(x0, d, r_max, dt, perturbation)
    n_t = grid.n_t
    t = grid.t
    gk = grid_table(d, dt, n_t)["g"]
    z0 = y0.z.base.extended(n_t)[: n_t + 1]
    seeds = [int(s) for s in seeds]
    Bv = np.empty((len(seeds), n_t + 1))
    X = np.empty((len(seeds), n_t + 1))
    for lo in range(0, len(seeds), batch):
        ids = range(lo, min(lo + batch, len(seeds)))
        H1 = np.empty((len(ids), n_t + 1))
        for row, i in enumerate(ids):
            Bv[i] = BrownianPath.generate(t_max, dt, seeds[i]).values
            H1[row] = StochasticConvolution(NoiseField.generate(d, grid, seeds[i]), d).origin_path("one")
        zeta = z0 - H1
        zeta[:, 0] = min(x0, 0.0)
        E = sigma * Bv[lo : lo + len(ids)] - beta * t
        X[lo : lo + len(ids)] = cms_arrays(E, np.full(len(ids), x0), zeta, gk, dt)[1]
    return Bv, X


def estimate_stationary(cfg: StationaryConfig) -> StationaryEstimate:
    """Monte Carlo sample of (X(T), ||Z(T, .)||_H1, Z(T, 0)) over independent replications."""
    r_max = cfg.r_max if cfg.r_max is not None else default_r_max(cfg.d, cfg.dt)
    seeds = np.array([replication_seed(cfg.seed, i) for i in range(cfg.reps)], dtype=np.int64)
    work = lambda s: _one_stationary(cfg, r_max, int(s))  # noqa: E731
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            rows = list(pool.map(work, seeds))
    else:
        rows = [work(s) for s in seeds]
    arr = np.array(rows)
    return StationaryEstimate(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], seeds, float(arr[:, 4].max()))
