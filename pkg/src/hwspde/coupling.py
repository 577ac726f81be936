"""Asymptotic coupling of two diffusion-model paths driven by the same noise.

Given Y started at y = (x0, z0) and a second start y~ = (x~0, z~0), both with
nonnegative x, the coupled path Y~ uses the same white noise M and Brownian
path B.  Differences are written Delta F = F - F~.

* Delta X(t) = Delta x0 exp(-lambda t), so X~ = X - Delta X is exact.
* Delta R solves Delta R = Fbar + g * Delta R with
  Fbar = Delta z0' + g(0) Delta X^- + Delta X^- * g'  (Delta X^- = X^- - X~^-).
* Delta K = -Delta X^- - int Delta R and Delta Z(t, r) = Delta z0(t + r) + Gamma_t Delta K(r).
* The Girsanov drift is m = -Delta R - lambda Delta X.

The route through Kbar and the renewal equation for R~ is computed as well
and serves as a consistency oracle for the difference route.
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
    cms_arrays,
    default_r_max,
    replication_seed,
    simulate_x_batch,
)
from .distributions import ServiceDistribution, check_assumptions
from .function_grid import (
    H1GridFunction,
    SimulationGrid,
    StatePoint,
    TimePath,
    grid_steps,
    h1_norm,
    trapezoid_weights,
)
from .kernels import (
    _cached_u,
    gamma_arrays,
    grid_table,
    memory_integral,
    renewal_apply,
    trap_conv,
    trap_cumint,
    u_minus_one_l1,
)
from .noise import BrownianPath, NoiseField

DEFAULT_LAMBDA = 1.0


def _require_in_A(y: StatePoint, name: str) -> None:
    if not y.x >= 0.0:
        raise ValueError(f"{name} must lie in A = {{x >= 0}}; got x = {y.x!r}")


def _l2(v: np.ndarray, dt: float) -> float:
    v = np.asarray(v, dtype=float)
    return math.sqrt(float(np.dot(trapezoid_weights(v.size - 1, dt), v * v)))


@dataclass(frozen=True)
class TildePath:
    """The coupled path Y~ on the grid of Y."""

    X: TimePath
    K: TimePath
    R: TimePath
    snapshot_index: np.ndarray
    Z_values: np.ndarray
    Z_derivs: np.ndarray

    def snapshot(self, n: int) -> H1GridFunction:
        pos = int(np.searchsorted(self.snapshot_index, n))
        if pos >= self.snapshot_index.size or self.snapshot_index[pos] != n:
            raise KeyError(f"no snapshot stored at step {n}")
        r_max = self.X.dt * (self.Z_values.shape[1] - 1)
        return H1GridFunction.from_arrays(r_max, self.Z_values[pos], self.Z_derivs[pos])


@dataclass(frozen=True, eq=False)
class CoupledPair:
    """Y, the coupled path Y~ and every difference process on one grid."""

    Y: DiffusionPath
    Ytilde: TildePath
    y: StatePoint
    ytilde: StatePoint
    lam: float
    R: TimePath
    Kbar: TimePath
    m: TimePath
    logN: TimePath
    delta_x: np.ndarray
    delta_x_minus: np.ndarray
    delta_R: np.ndarray
    delta_R_subtraction: np.ndarray
    delta_K: np.ndarray
    Fbar: np.ndarray
    dz0: np.ndarray = field(repr=False)
    ddz0: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return self.Y.dt

    @property
    def n_t(self) -> int:
        return self.Y.n_t

    @property
    def n_r(self) -> int:
        return self.Y.n_r

    @property
    def delta_x0(self) -> float:
        return self.y.x - self.ytilde.x

    def delta_z(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """(Delta Z(t_n, .), d/dr Delta Z(t_n, .)) on the age grid."""
        gv, gd = gamma_arrays(self.delta_K, n, self.dt, self.Y.d, self.n_r)
        return self.dz0[n : n + self.n_r + 1] + gv, self.ddz0[n : n + self.n_r + 1] + gd


# ---------------------------------------------------------------------------
def _delta_r_arrays(delta_x_minus: np.ndarray, ddz0: np.ndarray, d: ServiceDistribution, dt: float,
                    u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(Fbar, Delta R) for one path or a batch of rows of Delta X^-."""
    n_t = delta_x_minus.shape[-1] - 1
    tab = grid_table(d, dt, n_t)
    Fbar = ddz0[: n_t + 1] + tab["g"][0] * delta_x_minus + trap_conv(delta_x_minus, tab["dg"], dt)
    return Fbar, renewal_apply(Fbar, u, dt)


def _log_weight(m: np.ndarray, dB: np.ndarray, dt: float) -> np.ndarray:
    """Left-point Ito sum of m dB minus half the left-point sum of m^2 dt.

    Callers pass m / sigma: the coupled path is driven by E - int m, which is
    sigma B~ - beta t with B~ = B - int m / sigma.
    """
    inc = m[..., :-1] * dB - 0.5 * m[..., :-1] ** 2 * dt
    out = np.zeros(m.shape)
    out[..., 1:] = np.cumsum(inc, axis=-1)
    return out


def build_coupled(y: StatePoint, ytilde: StatePoint, lam: float, B: BrownianPath, M: NoiseField,
                  d: ServiceDistribution, sigma: float, beta: float,
                  snapshots: Sequence[float] | None = None, snapshot_stride: int | None = None,
                  allow_nonpositive_beta: bool = False, path: DiffusionPath | None = None) -> CoupledPair:
    """Construct the coupled pair (Y, Y~) on shared noise."""
    _require_in_A(y, "y")
    _require_in_A(ytilde, "ytilde")
    if not lam > 0:
        raise ValueError("coupling gain lambda must be positive")
    if path is None:
        path = build_diffusion(y, B, M, d, sigma, beta, snapshot_stride=snapshot_stride, snapshots=snapshots,
                               allow_nonpositive_beta=allow_nonpositive_beta)
    dt, n_t, n_r = path.dt, path.n_t, path.n_r
    t = np.arange(n_t + 1) * dt
    tab = grid_table(d, dt, n_t + n_r)

    X = np.asarray(path.X.values)
    dx0 = y.x - ytilde.x
    delta_x = dx0 * np.exp(-lam * t)
    Xt = X - delta_x
    dxm = np.maximum(-X, 0.0) - np.maximum(-Xt, 0.0)

    dz0 = y.z.base.extended(n_t + n_r) - ytilde.z.base.extended(n_t + n_r)
    ddz0 = y.z.deriv.extended(n_t + n_r) - ytilde.z.deriv.extended(n_t + n_r)
    u = _cached_u(d, path.X.t_max, dt)
    Fbar, dR = _delta_r_arrays(dxm, ddz0, d, dt, u.values)
    dK = -dxm - trap_cumint(dR, dt)

    R = path.R_path()
    Kt = np.asarray(path.K.values) - dK
    Rt = R - dR
    m = -dR - lam * delta_x
    logN = _log_weight(m / path.sigma, np.asarray(path.B.increments), dt)

    # consistency route: Kbar, renewal equation for R~, K~ = Kbar - int R~
    E = np.asarray(path.E.values)
    Kbar = E - (np.maximum(Xt, 0.0) - max(ytilde.x, 0.0)) + trap_cumint(R + lam * X - lam * Xt, dt)
    Hh = path.conv.origin_path("h")
    Ftilde = ytilde.z.deriv.extended(n_t)[: n_t + 1] - tab["g"][0] * Kbar - trap_conv(Kbar, tab["dg"], dt) + Hh
    Rt_direct = renewal_apply(Ftilde, u.values, dt)
    Kt_direct = Kbar - trap_cumint(Rt_direct, dt)
    dR_sub = R - Rt_direct

    snap = path.snapshot_index
    Zt_v = np.empty_like(path.Z_values)
    Zt_d = np.empty_like(path.Z_derivs)
    for row, n in enumerate(snap):
        gv, gd = gamma_arrays(dK, int(n), dt, d, n_r)
        Zt_v[row] = path.Z_values[row] - (dz0[n : n + n_r + 1] + gv)
        Zt_d[row] = path.Z_derivs[row] - (ddz0[n : n + n_r + 1] + gd)
    Zt_v.setflags(write=False)
    Zt_d.setflags(write=False)

    T = path.X.t_max
    tilde = TildePath(TimePath(T, n_t, Xt), TimePath(T, n_t, Kt), TimePath(T, n_t, Rt), snap, Zt_v, Zt_d)

    # residuals and consistency diagnostics
    txdef = Xt - (ytilde.x - y.x - lam * trap_cumint(Xt, dt) + X + lam * trap_cumint(X, dt))
    gK = trap_conv(Kt, tab["g"][: n_t + 1], dt)
    z_tilde_origin = ytilde.z.base.extended(n_t)[: n_t + 1] - path.H1 + Kt - gK
    diag = {
        "tilde_x_integral_residual": float(np.max(np.abs(txdef))),
        "delta_r_paths_sup_diff": float(np.max(np.abs(dR - dR_sub))),
        "delta_k_identity_residual": float(np.max(np.abs((np.asarray(path.K.values) - Kt_direct) - dK))),
        "tilde_boundary_defect": float(np.max(np.abs(z_tilde_origin - np.minimum(Xt, 0.0)))),
        "renewal_residual": float(np.max(np.abs(dR - Fbar - trap_conv(dR, tab["g"][: n_t + 1], dt)))),
    }
    defects = quadrature_defects(R, delta_x, dx0, lam, d, dt, u.values)
    diag["quadrature_tolerance"] = defects["quadrature_tolerance"]
    diag["quadrature_defects"] = defects
    diag["delta_k_tolerance"] = defects["exponential_raw"] + T * defects["quadrature_tolerance"]
    return CoupledPair(
        Y=path, Ytilde=tilde, y=y, ytilde=ytilde, lam=float(lam), R=TimePath(T, n_t, R),
        Kbar=TimePath(T, n_t, Kbar), m=TimePath(T, n_t, m), logN=TimePath(T, n_t, logN),
        delta_x=delta_x, delta_x_minus=dxm, delta_R=dR, delta_R_subtraction=dR_sub, delta_K=dK,
        Fbar=Fbar, dz0=dz0, ddz0=ddz0, diagnostics=diag,
    )


def quadrature_defects(R: np.ndarray, delta_x: np.ndarray, dx0: float, lam: float,
                       d: ServiceDistribution, dt: float, u: np.ndarray) -> dict:
    """Grid defects of the continuous identities linking the two Delta R routes.

    In continuous time both routes give the same Delta R.  On the grid they
    differ by the renewal image of three quadrature defects:

    * integration by parts, g(0) int R + (int R) * g' - g * R,
    * the exponential identity, Delta x0 - Delta X - lambda int Delta X,
    * renewal associativity, (g + u * g - u) applied to R.

    Returns each defect's sup norm after the renewal map, and their sum as
    ``quadrature_tolerance``.
    """
    n_t = R.size - 1
    tab = grid_table(d, dt, n_t)
    g, dg = tab["g"], tab["dg"]
    IR = trap_cumint(R, dt)
    parts = g[0] * IR + trap_conv(IR, dg, dt) - trap_conv(R, g, dt)
    q3 = dx0 - delta_x - lam * trap_cumint(delta_x, dt)
    expo = g[0] * q3 + trap_conv(q3, dg, dt)
    assoc = trap_conv(R, g, dt) + trap_conv(trap_conv(R, g, dt), u, dt) - trap_conv(R, u, dt)
    out = {
        "parts": float(np.max(np.abs(renewal_apply(parts, u, dt)))),
        "exponential": float(np.max(np.abs(renewal_apply(expo, u, dt)))),
        "associativity": float(np.max(np.abs(assoc))),
        "exponential_raw": float(np.max(np.abs(q3))),
    }
    out["quadrature_tolerance"] = out["parts"] + out["exponential"] + out["associativity"]
    return out


def tilde_cms_check(pair: CoupledPair) -> dict:
    """Re-solve the CMS map for Y~ with E~ = E - int m and compare with (K~, X~).

    The drift enters E~ unscaled: (K~, X~) = Lambda(E - int m, x~0, z~0 - H(1)).
    """
    p = pair.Y
    dt, n_t = p.dt, p.n_t
    Et = np.asarray(p.E.values) - trap_cumint(pair.m.values, dt)
    zeta = pair.ytilde.z.base.extended(n_t)[: n_t + 1] - p.H1
    zeta[0] = min(pair.ytilde.x, 0.0)
    gk = grid_table(p.d, dt, n_t)["g"]
    kappa, x = cms_arrays(Et, pair.ytilde.x, zeta, gk, dt)
    return {
        "x_residual": float(np.max(np.abs(x - pair.Ytilde.X.values))),
        "k_residual": float(np.max(np.abs(kappa - pair.Ytilde.K.values))),
    }


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DecayRow:
    t: float
    abs_delta_x: float
    delta_z_h1: float
    shifted_dz0_h1: float
    gbar_dxm_h1: float
    zeta_h1: float
    xi_h1: float
    decomposition_defect: float


def decay_report(pair: CoupledPair, times: Sequence[float]) -> list[DecayRow]:
    """|Delta X(t)|, ||Delta Z(t)||_H1 and the H1 norms of the four terms
    Delta z0(t + r) - Gbar(r) Delta X^-(t) + zeta(t, r) + xi(t, r)."""
    dt, n_r, d = pair.dt, pair.n_r, pair.Y.d
    tab = grid_table(d, dt, pair.n_t + n_r)
    r_max = n_r * dt
    h1 = lambda v, dv: h1_norm(H1GridFunction.from_arrays(r_max, v, dv))  # noqa: E731
    rows = []
    for t in times:
        n = grid_steps(t, dt)
        dz, ddz = pair.delta_z(n)
        s0 = (pair.dz0[n : n + n_r + 1], pair.ddz0[n : n + n_r + 1])
        s1 = (-tab["gbar"][: n_r + 1] * pair.delta_x_minus[n], tab["g"][: n_r + 1] * pair.delta_x_minus[n])
        s2 = (memory_integral(pair.delta_x_minus, n, dt, tab["g"], n_r),
              memory_integral(pair.delta_x_minus, n, dt, tab["dg"], n_r))
        s3 = (-memory_integral(pair.delta_R, n, dt, tab["gbar"], n_r),
              memory_integral(pair.delta_R, n, dt, tab["g"], n_r))
        total = s0[0] + s1[0] + s2[0] + s3[0]
        rows.append(DecayRow(
            t=float(n * dt),
            abs_delta_x=float(abs(pair.delta_x[n])),
            delta_z_h1=h1(dz, ddz),
            shifted_dz0_h1=h1(*s0),
            gbar_dxm_h1=h1(*s1),
            zeta_h1=h1(*s2),
            xi_h1=h1(*s3),
            decomposition_defect=float(np.max(np.abs(total - dz))),
        ))
    return rows


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DeltaRBound:
    lhs: float
    rhs: float
    passed: bool
    margin: float
    constants: dict

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.passed))


def bound_constants(d: ServiceDistribution, lam: float, dt: float, t_max: float) -> dict:
    """Constants of the Delta R bound: c1 = 1 + ||u - 1||_L1, c2 = 1,
    C = (g(0) + H2) / sqrt(2 lambda), Cbar1 = c1 + c2, Cbar2 = (c1 + c2) C."""
    u = _cached_u(d, t_max, dt)
    body, tail = u_minus_one_l1(u)
    c1 = 1.0 + body + tail
    c2 = 1.0
    H2 = check_assumptions(d).h2_sup
    C = (float(d.pdf(np.array([0.0]))[0]) + H2) / math.sqrt(2.0 * lam)
    return {"c1": c1, "c2": c2, "H2": H2, "C": C, "Cbar1": c1 + c2, "Cbar2": (c1 + c2) * C,
            "u_minus_one_l1_tail": tail}


def delta_r_bound_check(pair: CoupledPair, constants: dict | None = None) -> DeltaRBound:
    """||Delta R||_L2 against Cbar1 ||Delta z0||_H1 + Cbar2 |Delta x0|.

    Delta R is only known on [0, T]; the truncated norm is a lower bound for
    the full one, so lhs <= rhs on [0, T] is implied by the inequality.
    """
    dt = pair.dt
    consts = constants or bound_constants(pair.Y.d, pair.lam, dt, pair.Y.X.t_max)
    lhs = _l2(pair.delta_R, dt)
    n_r = pair.n_r
    dz0_h1 = h1_norm(H1GridFunction.from_arrays(n_r * dt, pair.dz0[: n_r + 1], pair.ddz0[: n_r + 1]))
    rhs = consts["Cbar1"] * dz0_h1 + consts["Cbar2"] * abs(pair.delta_x0)
    out = dict(consts)
    out.update({"delta_z0_h1": dz0_h1, "delta_x0": pair.delta_x0,
                "delta_r_paths_sup_diff": pair.diagnostics["delta_r_paths_sup_diff"],
                "renewal_residual": pair.diagnostics["renewal_residual"],
                "quadrature_tolerance": pair.diagnostics["quadrature_tolerance"]})
    return DeltaRBound(lhs, rhs, bool(lhs <= rhs), rhs - lhs, out)


def delta_r_paths_agree(pair: CoupledPair, factor: float = 10.0) -> bool:
    dg = pair.diagnostics
    return dg["delta_r_paths_sup_diff"] <= factor * (dg["renewal_residual"] + dg["quadrature_tolerance"])


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GirsanovReport:
    logN: TimePath
    m_l2_sq: float
    bound: float
    delta_r_l2_sq: float
    delta_x_l2_sq: float

    @property
    def bound_holds(self) -> bool:
        return self.m_l2_sq <= self.bound


def girsanov_weight(pair: CoupledPair) -> GirsanovReport:
    dt = pair.dt
    m2 = _l2(pair.m.values, dt) ** 2
    r2 = _l2(pair.delta_R, dt) ** 2
    x2 = _l2(pair.delta_x, dt) ** 2
    return GirsanovReport(pair.logN, m2, 2.0 * r2 + 2.0 * pair.lam**2 * x2, r2, x2)


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GirsanovBatch:
    """Terminal weights and drift norms over many independent replications."""

    logN_T: np.ndarray
    m_l2_sq: np.ndarray
    bound: np.ndarray
    seeds: np.ndarray

    @property
    def N_T(self) -> np.ndarray:
        return np.exp(self.logN_T)

    def mean_and_se(self) -> tuple[float, float]:
        v = self.N_T
        return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def girsanov_batch(d: ServiceDistribution, x0: float, x0_tilde: float, lam: float, sigma: float, beta: float,
                   dt: float, t_max: float, reps: int, seed: int = 0, r_max: float | None = None,
                   perturbation: tuple[Callable, Callable] | None = None,
                   perturbation_tilde: tuple[Callable, Callable] | None = None,
                   batch: int = 500) -> GirsanovBatch:
    """Girsanov weights for ``reps`` coupled pairs without materialising Z.

    Each replication uses the seed ``replication_seed(seed, i)`` so that any
    single replication can be rebuilt with ``build_coupled``.
    """
    r_max = r_max if r_max is not None else default_r_max(d, dt)
    grid = SimulationGrid(dt, t_max, r_max)
    y = canonical_state(x0, d, r_max, dt, perturbation)
    yt = canonical_state(x0_tilde, d, r_max, dt, perturbation_tilde)
    _require_in_A(y, "y")
    _require_in_A(yt, "ytilde")
    n_t, n_r = grid.n_t, grid.n_r
    delta_x = (x0 - x0_tilde) * np.exp(-lam * grid.t)
    ddz0 = y.z.deriv.extended(n_t + n_r) - yt.z.deriv.extended(n_t + n_r)
    u = _cached_u(d, t_max, dt).values
    seeds = np.array([replication_seed(seed, i) for i in range(reps)], dtype=np.int64)
    logN = np.empty(reps)
    m2 = np.empty(reps)
    bound = np.empty(reps)
    w = trapezoid_weights(n_t, dt)
    for lo in range(0, reps, batch):
        hi = min(lo + batch, reps)
        Bv, X = simulate_x_batch(d, x0, sigma, beta, dt, t_max, seeds[lo:hi], r_max, perturbation, batch)
        Xt = X - delta_x
        dxm = np.maximum(-X, 0.0) - np.maximum(-Xt, 0.0)
        _, dR = _delta_r_arrays(dxm, ddz0, d, dt, u)
        m = -dR - lam * delta_x
        logN[lo:hi] = _log_weight(m / sigma, np.diff(Bv, axis=1), dt)[:, -1]
        m2[lo:hi] = (m * m) @ w
        bound[lo:hi] = 2.0 * (dR * dR) @ w + 2.0 * lam**2 * float(delta_x**2 @ w)
    return GirsanovBatch(logN, m2, bound, seeds)


def coupled_from_seed(d: ServiceDistribution, y: StatePoint, ytilde: StatePoint, lam: float, sigma: float,
                      beta: float, dt: float, t_max: float, seed: int,
                      snapshots: Sequence[float] | None = None) -> CoupledPair:
    """Generate B and M from ``seed`` on the grid of ``y`` and build the pair."""
    grid = SimulationGrid(dt, t_max, y.z.r_max)
    B = BrownianPath.generate(t_max, dt, seed)
    M = NoiseField.generate(d, grid, seed)
    return build_coupled(y, ytilde, lam, B, M, d, sigma, beta, snapshots=snapshots if snapshots is not None else [])
