"""Independent reference computations used by the test suite.

Each oracle avoids the code path it checks: closed forms come from
scipy.stats or scipy.linalg, integrals from adaptive quadrature, stochastic
sums from explicit loops over cells, and the exponential-service diffusion
from a scalar Euler-Maruyama scheme.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, linalg, stats


# --------------------------------------------------------------- distributions
def scipy_ccdf(family: str, params: dict, x: np.ndarray) -> np.ndarray:
    """Survival function from scipy.stats (or expm for phase type)."""
    x = np.asarray(x, dtype=float)
    if family == "Exponential":
        return stats.expon(scale=1.0 / params["rate"]).sf(x)
    if family == "Lomax":
        return stats.lomax(c=params["alpha"], scale=params["scale"]).sf(x)
    if family == "LogNormal":
        return stats.lognorm(s=params["sigma"], scale=math.exp(params["mu"])).sf(x)
    if family == "Gamma":
        return stats.gamma(a=params["alpha"], scale=1.0 / params["beta"]).sf(x)
    if family == "PhaseType":
        alpha = np.asarray(params["alpha"], dtype=float)
        S = np.asarray(params["S"], dtype=float)
        one = np.ones(alpha.size)
        return np.array([alpha @ linalg.expm(v * S) @ one for v in np.atleast_1d(x)])
    raise ValueError(family)


def phase_type_mean(alpha, S) -> float:
    """-alpha S^{-1} 1 by a direct linear solve."""
    alpha = np.asarray(alpha, dtype=float)
    return float(-alpha @ np.linalg.solve(np.asarray(S, dtype=float), np.ones(alpha.size)))


def quad_mean(ccdf, upper: float = np.inf) -> float:
    val, _ = integrate.quad(ccdf, 0.0, upper, limit=500, epsabs=1e-12)
    return float(val)


# --------------------------------------------------------------------- kernels
def erlang2_renewal_series(t: np.ndarray, n_terms: int = 60) -> np.ndarray:
    """u = sum_{n>=1} g^{*n} for Gamma(2, rate 2): g^{*n} is Gamma(2n, rate 2)."""
    t = np.asarray(t, dtype=float)
    return sum(stats.gamma(a=2 * n, scale=0.5).pdf(t) for n in range(1, n_terms + 1))


def picard_volterra_plus(r_fn, g_fn, t_max: float, dt: float, tol: float = 1e-13,
                         max_iter: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Fixed point of x = r + int_0^t g(t - s) x^+(s) ds by Picard iteration.

    Each sweep evaluates the whole convolution with the trapezoidal rule
    (np.convolve), independent of any time-stepping solver.
    """
    n = int(round(t_max / dt))
    t = np.arange(n + 1) * dt
    r = np.asarray(r_fn(t), dtype=float)
    g = np.asarray(g_fn(t), dtype=float)
    x = r.copy()
    for _ in range(max_iter):
        xp = np.maximum(x, 0.0)
        full = np.convolve(xp, g)[: n + 1]
        conv = dt * (full - 0.5 * (xp * g[0] + xp[0] * g))
        conv[0] = 0.0
        new = r + conv
        if np.max(np.abs(new - x)) < tol:
            return t, new
        x = new
    raise RuntimeError("Picard iteration did not converge")


def gamma_op_quad(kappa, t: float, r: float, ccdf, pdf) -> float:
    """(Gamma_t kappa)(r) = Gbar(r) kappa(t) - int_0^t kappa(s) g(t + r - s) ds by adaptive quadrature."""
    val, _ = integrate.quad(lambda s: kappa(s) * pdf(t + r - s), 0.0, t, limit=200, epsabs=1e-13)
    return float(ccdf(r) * kappa(t) - val)


# ----------------------------------------------------------------------- noise
def psi_by_loops(increments: np.ndarray, dt: float, ccdf, pdf, n: int, k: int, weight: str) -> float:
    """M_{t_n}(Psi_{t_n + r_k} f) by an explicit double sum over cells.

    The integrand at cell midpoint x_j and left time s_i is
    F(x_j + t_n + r_k - s_i) / Gbar(x_j) with F = Gbar (weight 'one') or g (weight 'h').
    """
    F = ccdf if weight == "one" else pdf
    total = 0.0
    n_r = increments.shape[0]
    for j in range(n_r):
        x = (j + 0.5) * dt
        gx = float(ccdf(x))
        for i in range(n):
            total += float(F(x + (n - i + k) * dt)) / gx * increments[j, i]
    return total


# ------------------------------------------------------------------- diffusion
def euler_maruyama_exponential(x0: float, beta: float, sigma: float, dt: float, t_max: float,
                               n_paths: int, seed: int) -> np.ndarray:
    """Terminal values of dX = (-beta - min(X, 0)) dt + sqrt(sigma^2 + 1) dW."""
    rng = np.random.default_rng(seed)
    x = np.full(n_paths, float(x0))
    vol = math.sqrt(sigma * sigma + 1.0) * math.sqrt(dt)
    for _ in range(int(round(t_max / dt))):
        x = x + (-beta - np.minimum(x, 0.0)) * dt + vol * rng.standard_normal(n_paths)
    return x


# ----------------------------------------------------------------------- queue
def mmn_stationary(lam: float, N: int, tail: float = 1e-16) -> np.ndarray:
    """Birth-death stationary law of the M/M/N queue with unit service rate."""
    p = [1.0]
    k = 0
    while True:
        k += 1
        p.append(p[-1] * lam / min(k, N))
        if k > N and p[-1] < tail * sum(p):
            break
    p = np.array(p)
    return p / p.sum()


def mmn_busy_fraction(lam: float, N: int) -> float:
    """Expected fraction of busy servers, E[min(Q, N)] / N, from the stationary law."""
    pi = mmn_stationary(lam, N)
    k = np.arange(pi.size)
    return float(np.dot(pi, np.minimum(k, N)) / N)
