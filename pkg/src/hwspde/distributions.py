"""Service-time distributions with closed-form survival, density and hazard.

Every family is normalised to mean one at construction (unless explicitly
disabled) by rescaling its scale parameter.  The original parameters are kept
in ``metadata``.  All evaluation routines accept scalars or numpy arrays and
work in log space wherever a tail could underflow, so that hazard-type
ratios are never formed by dividing two tiny numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy import special

FAMILIES = ("Exponential", "Lomax", "LogNormal", "Gamma", "PhaseType")

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _as_array(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("distribution functions are defined for x >= 0 only")
    return arr, arr.ndim == 0


def _out(arr: np.ndarray, scalar: bool):
    return float(arr) if scalar else arr


class ServiceDistribution:
    """Base class: subclasses provide log-survival, log-density and g'/g.

    Subclasses implement ``_log_sf``, ``_log_pdf``, ``_hazard``, ``_h2``,
    ``_dpdf``, ``_sample`` and ``_log_isf`` on float arrays of nonnegative
    ages.
    """

    family: str = ""

    def __init__(self, params: Mapping[str, Any], metadata: Mapping[str, Any]):
        self._params = dict(params)
        self._metadata = dict(metadata)

    # ------------------------------------------------------------------ API
    @property
    def params(self) -> dict:
        return dict(self._params)

    @property
    def metadata(self) -> dict:
        return dict(self._metadata)

    def log_ccdf(self, x):
        arr, sc = _as_array(x)
        return _out(self._log_sf(arr.reshape(-1)).reshape(arr.shape), sc)

    def ccdf(self, x):
        arr, sc = _as_array(x)
        return _out(np.exp(self._log_sf(arr.reshape(-1))).reshape(arr.shape), sc)

    def cdf(self, x):
        arr, sc = _as_array(x)
        return _out(-np.expm1(self._log_sf(arr.reshape(-1))).reshape(arr.shape), sc)

    def pdf(self, x):
        arr, sc = _as_array(x)
        return _out(np.exp(self._log_pdf(arr.reshape(-1))).reshape(arr.shape), sc)

    def dpdf(self, x):
        """Derivative g'(x) of the density."""
        arr, sc = _as_array(x)
        return _out(self._dpdf(arr.reshape(-1)).reshape(arr.shape), sc)

    def hazard(self, x):
        """Hazard rate h(x) = g(x) / Gbar(x)."""
        arr, sc = _as_array(x)
        return _out(self._hazard(arr.reshape(-1)).reshape(arr.shape), sc)

    def h2(self, x):
        """The ratio g'(x) / Gbar(x) (right limit at the origin)."""
        arr, sc = _as_array(x)
        return _out(self._h2(arr.reshape(-1)).reshape(arr.shape), sc)

    def log_isf(self, logp):
        """Inverse of the log-survival function."""
        lp = np.asarray(logp, dtype=float)
        if np.any(lp > 0):
            raise ValueError("log probabilities must be <= 0")
        res = self._log_isf(lp.reshape(-1)).reshape(lp.shape)
        return float(res) if lp.ndim == 0 else res

    def isf(self, p):
        return self.log_isf(np.log(np.asarray(p, dtype=float)))

    def sample(self, rng: np.random.Generator, size=None):
        """Draw i.i.d. service times using the supplied generator."""
        n = 1 if size is None else int(np.prod(size))
        draws = self._sample(rng, n)
        if size is None:
            return float(draws[0])
        return draws.reshape(size)

    def sample_residual(self, ages, rng: np.random.Generator) -> np.ndarray:
        """Remaining service times of jobs that have already received ``ages``.

        Inverse transform on the conditional survival Gbar(a + y) / Gbar(a).
        """
        ages = np.asarray(ages, dtype=float).reshape(-1)
        logu = np.log(rng.random(ages.size))
        total = self.log_isf(logu + self._log_sf(ages))
        return np.maximum(np.asarray(total) - ages, 0.0)

    def tail_quantile(self, tail: float = 1e-6) -> float:
        """Smallest age R with Gbar(R) <= tail."""
        return float(self.log_isf(math.log(tail)))

    # analytic summaries -------------------------------------------------
    def mean(self) -> float:
        raise NotImplementedError

    def second_moment(self) -> float:
        raise NotImplementedError

    def hazard_limits(self) -> tuple[float, float]:
        """(h(0+), h(infinity))."""
        raise NotImplementedError

    def h2_limits(self) -> tuple[float, float]:
        """(h2(0+), h2(infinity))."""
        raise NotImplementedError

    def to_config(self) -> dict:
        return {
            "family": self.family,
            "params": _jsonable(self._metadata.get("original", self._params)),
            "normalize_mean": bool(self._metadata.get("normalized", False)),
        }

    def __repr__(self) -> str:
        shown = ", ".join(f"{k}={_short(v)}" for k, v in self._params.items())
        return f"{self.family}({shown})"

    # generic numerical inverse -----------------------------------------
    def _bisect_log_isf(self, logp: np.ndarray) -> np.ndarray:
        lo = np.zeros_like(logp)
        hi = np.ones_like(logp)
        for _ in range(2000):
            short = self._log_sf(hi) > logp
            if not short.any():
                break
            hi = np.where(short, 2.0 * hi, hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            above = self._log_sf(mid) > logp
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
            if np.all(hi - lo <= 1e-14 * np.maximum(hi, 1.0)):
                break
        return 0.5 * (lo + hi)


def _short(v) -> str:
    if isinstance(v, np.ndarray):
        return np.array2string(v, precision=4, separator=",")
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Mapping):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
class Exponential(ServiceDistribution):
    family = "Exponential"

    def __init__(self, rate: float = 1.0, normalize_mean: bool = True):
        if not rate > 0:
            raise ValueError("Exponential rate must be positive")
        original = {"rate": float(rate)}
        if normalize_mean:
            rate = 1.0
        super().__init__({"rate": float(rate)}, {"original": original, "normalized": normalize_mean})
        self.rate = float(rate)

    def _log_sf(self, x):
        return -self.rate * x

    def _log_pdf(self, x):
        return math.log(self.rate) - self.rate * x

    def _dpdf(self, x):
        return -self.rate**2 * np.exp(-self.rate * x)

    def _hazard(self, x):
        return np.full_like(x, self.rate)

    def _h2(self, x):
        return np.full_like(x, -self.rate**2)

    def _log_isf(self, logp):
        return -logp / self.rate

    def _sample(self, rng, n):
        return rng.exponential(1.0 / self.rate, n)

    def mean(self):
        return 1.0 / self.rate

    def second_moment(self):
        return 2.0 / self.rate**2

    def hazard_limits(self):
        return (self.rate, self.rate)

    def h2_limits(self):
        return (-self.rate**2, -self.rate**2)


class Lomax(ServiceDistribution):
    """Pareto type II: Gbar(x) = (1 + x/scale)^(-alpha)."""

    family = "Lomax"

    def __init__(self, alpha: float, scale: float = 1.0, normalize_mean: bool = True):
        if not alpha > 0 or not scale > 0:
            raise ValueError("Lomax requires alpha > 0 and scale > 0")
        original = {"alpha": float(alpha), "scale": float(scale)}
        if normalize_mean:
            if alpha <= 1:
                raise ValueError("Lomax with alpha <= 1 has infinite mean and cannot be normalised")
            scale = alpha - 1.0
        super().__init__(
            {"alpha": float(alpha), "scale": float(scale)},
            {"original": original, "normalized": normalize_mean},
        )
        self.alpha = float(alpha)
        self.scale = float(scale)

    def _log_sf(self, x):
        return -self.alpha * np.log1p(x / self.scale)

    def _log_pdf(self, x):
        return math.log(self.alpha / self.scale) - (self.alpha + 1.0) * np.log1p(x / self.scale)

    def _dpdf(self, x):
        a, lam = self.alpha, self.scale
        return -a * (a + 1.0) / lam**2 * (1.0 + x / lam) ** (-(a + 2.0))

    def _hazard(self, x):
        return (self.alpha / self.scale) / (1.0 + x / self.scale)

    def _h2(self, x):
        a, lam = self.alpha, self.scale
        return -a * (a + 1.0) / lam**2 / (1.0 + x / lam) ** 2

    def _log_isf(self, logp):
        return self.scale * np.expm1(-logp / self.alpha)

    def _sample(self, rng, n):
        return self._log_isf(np.log(rng.random(n)))

    def mean(self):
        return self.scale / (self.alpha - 1.0) if self.alpha > 1 else math.inf

    def second_moment(self):
        a, lam = self.alpha, self.scale
        return 2.0 * lam**2 / ((a - 1.0) * (a - 2.0)) if a > 2 else math.inf

    def hazard_limits(self):
        return (self.alpha / self.scale, 0.0)

    def h2_limits(self):
        return (-self.alpha * (self.alpha + 1.0) / self.scale**2, 0.0)


class LogNormal(ServiceDistribution):
    family = "LogNormal"

    def __init__(self, mu: float = 0.0, sigma: float = 1.0, normalize_mean: bool = True):
        if not sigma > 0:
            raise ValueError("LogNormal requires sigma > 0")
        original = {"mu": float(mu), "sigma": float(sigma)}
        if normalize_mean:
            mu = -0.5 * sigma**2
        super().__init__(
            {"mu": float(mu), "sigma": float(sigma)},
            {"original": original, "normalized": normalize_mean},
        )
        self.mu = float(mu)
        self.sigma = float(sigma)

    def _z(self, x):
        with np.errstate(divide="ignore"):
            return (np.log(x) - self.mu) / self.sigma

    def _log_sf(self, x):
        return special.log_ndtr(-self._z(x))

    def _log_pdf(self, x):
        z = self._z(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -0.5 * z**2 - np.log(x * self.sigma) - _LOG_SQRT_2PI
        return np.where(x > 0, out, -np.inf)

    def _dpdf(self, x):
        z = self._z(x)
        g = np.exp(self._log_pdf(x))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -g * (1.0 + z / self.sigma) / x
        return np.where(x > 0, out, 0.0)

    def _hazard(self, x):
        with np.errstate(invalid="ignore"):
            out = np.exp(self._log_pdf(x) - self._log_sf(x))
        return np.where(x > 0, out, 0.0)

    def _h2(self, x):
        z = self._z(x)
        h = self._hazard(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -h * (1.0 + z / self.sigma) / x
        return np.where(x > 0, out, 0.0)

    def _log_isf(self, logp):
        z = -special.ndtri_exp(logp)
        return np.exp(self.mu + self.sigma * z)

    def _sample(self, rng, n):
        return np.exp(self.mu + self.sigma * rng.standard_normal(n))

    def mean(self):
        return math.exp(self.mu + 0.5 * self.sigma**2)

    def second_moment(self):
        return math.exp(2.0 * self.mu + 2.0 * self.sigma**2)

    def hazard_limits(self):
        return (0.0, 0.0)

    def h2_limits(self):
        return (0.0, 0.0)


def _gamma_log_sf(a: float, z: np.ndarray) -> np.ndarray:
    """log of the regularised upper incomplete gamma function Q(a, z).

    Uses scipy where Q is representable and the asymptotic expansion
    Gamma(a, z) ~ z^(a-1) e^(-z) sum_k (a-1)...(a-k) / z^k beyond that.
    """
    out = np.empty_like(z)
    with np.errstate(divide="ignore"):
        q = special.gammaincc(a, z)
    ok = q > 1e-280
    out[ok] = np.log(q[ok])
    if (~ok).any():
        zb = z[~ok]
        total = np.ones_like(zb)
        term = np.ones_like(zb)
        for k in range(1, 40):
            term = term * (a - k) / zb
            total = total + term
            if np.all(np.abs(term) < 1e-17 * np.abs(total)):
                break
        out[~ok] = (a - 1.0) * np.log(zb) - zb - special.gammaln(a) + np.log(total)
    return out


class Gamma(ServiceDistribution):
    """Gamma distribution with shape ``alpha`` and rate ``beta``."""

    family = "Gamma"

    def __init__(self, alpha: float, beta: float = 1.0, normalize_mean: bool = True):
        if not alpha > 0 or not beta > 0:
            raise ValueError("Gamma requires shape > 0 and rate > 0")
        original = {"alpha": float(alpha), "beta": float(beta)}
        if normalize_mean:
            beta = alpha
        super().__init__(
            {"alpha": float(alpha), "beta": float(beta)},
            {"original": original, "normalized": normalize_mean},
        )
        self.alpha = float(alpha)
        self.beta = float(beta)

    def _log_sf(self, x):
        return _gamma_log_sf(self.alpha, self.beta * x)

    def _log_pdf(self, x):
        a, b = self.alpha, self.beta
        with np.errstate(divide="ignore"):
            return a * math.log(b) + special.xlogy(a - 1.0, x) - b * x - special.gammaln(a)

    def _dpdf(self, x):
        a, b = self.alpha, self.beta
        with np.errstate(divide="ignore", invalid="ignore"):
            core = (a - 1.0 - b * x) * np.exp(
                a * math.log(b) + special.xlogy(a - 2.0, x) - b * x - special.gammaln(a)
            )
        if a == 2.0:
            core = np.where(x == 0, b**2, core)
        elif a > 2.0:
            core = np.where(x == 0, 0.0, core)
        elif a == 1.0:
            core = np.where(x == 0, -b**2, core)
        return core

    def _hazard(self, x):
        h = np.exp(self._log_pdf(x) - self._log_sf(x))
        return np.where(x == 0, self.hazard_limits()[0], h)

    def _h2(self, x):
        a, b = self.alpha, self.beta
        with np.errstate(divide="ignore", invalid="ignore"):
            mag = np.exp(
                a * math.log(b)
                + special.xlogy(a - 2.0, x)
                - b * x
                - special.gammaln(a)
                - self._log_sf(x)
            )
            out = (a - 1.0 - b * x) * mag
        return np.where(x == 0, self.h2_limits()[0], out)

    def _log_isf(self, logp):
        p = np.exp(logp)
        out = np.empty_like(logp)
        ok = p > 1e-280
        out[ok] = special.gammainccinv(self.alpha, p[ok]) / self.beta
        if (~ok).any():
            out[~ok] = self._bisect_log_isf(logp[~ok])
        return out

    def _sample(self, rng, n):
        a = self.alpha
        if a == 2.0:
            return (rng.exponential(1.0, n) + rng.exponential(1.0, n)) / self.beta
        return rng.gamma(a, 1.0 / self.beta, n)

    def mean(self):
        return self.alpha / self.beta

    def second_moment(self):
        return self.alpha * (self.alpha + 1.0) / self.beta**2

    def hazard_limits(self):
        a, b = self.alpha, self.beta
        at0 = 0.0 if a > 1 else (b if a == 1 else math.inf)
        return (at0, b)

    def h2_limits(self):
        a, b = self.alpha, self.beta
        if a > 2:
            at0 = 0.0
        elif a == 2:
            at0 = b**2
        elif a > 1:
            at0 = math.inf
        elif a == 1:
            at0 = -(b**2)
        else:
            at0 = -math.inf
        return (at0, -(b**2))


class PhaseType(ServiceDistribution):
    """Continuous phase-type distribution PH(alpha, S).

    Matrix exponentials are evaluated by uniformisation with log-space
    Poisson weights and a running rescaling of alpha P^k, which keeps tails
    representable far beyond the double-precision underflow of Gbar.
    """

    family = "PhaseType"

    def __init__(self, alpha, S, normalize_mean: bool = True):
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        S = np.atleast_2d(np.asarray(S, dtype=float))
        m = alpha.size
        if S.shape != (m, m):
            raise ValueError("subgenerator must be square and match the size of alpha")
        if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > 1e-12:
            raise ValueError("initial vector must be a probability vector with no atom at zero")
        off = S - np.diag(np.diag(S))
        if np.any(np.diag(S) >= 0) or np.any(off < 0) or np.any(S.sum(axis=1) > 1e-12):
            raise ValueError("S is not a subgenerator")
        try:
            mean = float(alpha @ np.linalg.solve(-S, np.ones(m)))
        except np.linalg.LinAlgError as exc:
            raise ValueError("S is singular: absorption is not certain") from exc
        if not np.isfinite(mean) or mean <= 0:
            raise ValueError("S is not a transient subgenerator")
        original = {"alpha": alpha.tolist(), "S": S.tolist()}
        if normalize_mean:
            S = S * mean
        super().__init__({"alpha": alpha, "S": S}, {"original": original, "normalized": normalize_mean})
        self.alpha = alpha
        self.alpha.setflags(write=False)
        self.S = S
        self.S.setflags(write=False)
        self.m = m
        one = np.ones(m)
        self.exit = -S @ one
        self.nu = -S @ (S @ one)
        self.q = float(np.max(-np.diag(S)))
        self.P = np.eye(m) + S / self.q

    def _scaled_row(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (ptilde, logscale) with alpha exp(xS) = exp(logscale) * ptilde."""
        qx = self.q * x
        kmax = int(np.ceil(qx.max() + 12.0 * np.sqrt(qx.max()) + 40.0)) if qx.size else 1
        vecs = np.empty((kmax + 1, self.m))
        logc = np.empty(kmax + 1)
        v = self.alpha.copy()
        c = 0.0
        for k in range(kmax + 1):
            s = v.sum()
            if s <= 0:
                vecs[k:] = 0.0
                logc[k:] = -np.inf
                break
            c += math.log(s)
            v = v / s
            vecs[k] = v
            logc[k] = c
            v = v @ self.P
        ks = np.arange(kmax + 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            logw = -qx[:, None] + special.xlogy(ks[None, :], qx[:, None]) - special.gammaln(ks + 1.0)[None, :]
        logw = logw + logc[None, :]
        top = np.max(logw, axis=1, keepdims=True)
        ptilde = np.exp(logw - top) @ vecs
        return ptilde, top[:, 0]

    def _eval(self, x, chunk: int = 4096):
        pt = np.empty((x.size, self.m))
        ls = np.empty(x.size)
        order = np.argsort(x)
        for start in range(0, x.size, chunk):
            idx = order[start : start + chunk]
            pt[idx], ls[idx] = self._scaled_row(x[idx])
        return pt, ls

    def _log_sf(self, x):
        pt, ls = self._eval(x)
        return ls + np.log(pt.sum(axis=1))

    def _log_pdf(self, x):
        pt, ls = self._eval(x)
        with np.errstate(divide="ignore"):
            return ls + np.log(pt @ self.exit)

    def _dpdf(self, x):
        pt, ls = self._eval(x)
        return np.exp(ls) * (pt @ self.nu)

    def _hazard(self, x):
        pt, _ = self._eval(x)
        return (pt @ self.exit) / pt.sum(axis=1)

    def _h2(self, x):
        pt, _ = self._eval(x)
        return (pt @ self.nu) / pt.sum(axis=1)

    def _log_isf(self, logp):
        return self._bisect_log_isf(logp)

    def _sample(self, rng, n):
        m = self.m
        rates = -np.diag(self.S)
        jump = np.zeros((m, m + 1))
        jump[:, :m] = self.S / rates[:, None]
        np.fill_diagonal(jump[:, :m], 0.0)
        jump[:, m] = self.exit / rates
        cum = np.cumsum(jump, axis=1)
        cum[:, -1] = 1.0
        state = rng.choice(m, size=n, p=self.alpha)
        total = np.zeros(n)
        alive = np.arange(n)
        while alive.size:
            st = state[alive]
            total[alive] += rng.exponential(1.0, alive.size) / rates[st]
            u = rng.random(alive.size)
            nxt = (u[:, None] > cum[st]).sum(axis=1)
            state[alive] = nxt
            alive = alive[nxt < m]
        return total

    def mean(self):
        return float(self.alpha @ np.linalg.solve(-self.S, np.ones(self.m)))

    def second_moment(self):
        Sinv = np.linalg.inv(self.S)
        return float(2.0 * self.alpha @ Sinv @ Sinv @ np.ones(self.m))

    def hazard_limits(self):
        return (float(self.alpha @ self.exit), -self._decay_rate())

    def h2_limits(self):
        return (float(self.alpha @ self.nu), -self._decay_rate() ** 2)

    def _decay_rate(self) -> float:
        # the survival function decays like exp(eta x) times a polynomial,
        # with eta the eigenvalue of S of largest real part
        return float(np.max(np.linalg.eigvals(self.S).real))


# ---------------------------------------------------------------------------
_BUILDERS = {
    "Exponential": (Exponential, ("rate",)),
    "Lomax": (Lomax, ("alpha", "scale")),
    "LogNormal": (LogNormal, ("mu", "sigma")),
    "Gamma": (Gamma, ("alpha", "beta")),
    "PhaseType": (PhaseType, ("alpha", "S")),
}

_ALIASES = {
    "exponential": "Exponential",
    "exp": "Exponential",
    "lomax": "Lomax",
    "pareto2": "Lomax",
    "lognormal": "LogNormal",
    "gamma": "Gamma",
    "erlang": "Gamma",
    "phasetype": "PhaseType",
    "phase-type": "PhaseType",
    "ph": "PhaseType",
}

_PARAM_ALIASES = {
    "lambda": "scale",
    "lam": "scale",
    "shape": "alpha",
    "rate_gamma": "beta",
    "location": "mu",
    "scale_log": "sigma",
}


def canonical_family(name: str) -> str:
    key = name.strip().lower()
    if key in _ALIASES:
        return _ALIASES[key]
    raise ValueError(f"unknown distribution family {name!r}; expected one of {FAMILIES}")


def make_distribution(family: str, params: Mapping[str, Any] | None = None,
                      normalize_mean: bool = True) -> ServiceDistribution:
    """Construct a distribution from a family name and a parameter mapping."""
    fam = canonical_family(family)
    cls, names = _BUILDERS[fam]
    params = dict(params or {})
    if fam == "Gamma" and "rate" in params:
        params["beta"] = params.pop("rate")
    for old, new in _PARAM_ALIASES.items():
        if old in params and new in names:
            params[new] = params.pop(old)
    unknown = set(params) - set(names)
    if unknown:
        raise ValueError(f"unknown parameters {sorted(unknown)} for {fam}")
    return cls(**params, normalize_mean=normalize_mean)


def from_config(cfg: Mapping[str, Any]) -> ServiceDistribution:
    """Build from ``{"family": ..., "params": {...}, "normalize_mean": bool}``."""
    if "family" not in cfg:
        raise ValueError("distribution config needs a 'family' entry")
    return make_distribution(cfg["family"], cfg.get("params", {}), bool(cfg.get("normalize_mean", True)))


def erlang(k: int = 2, normalize_mean: bool = True) -> PhaseType:
    """Erlang-k as a phase-type distribution with unit rate per phase before normalisation."""
    S = -np.eye(k) + np.eye(k, k=1)
    alpha = np.zeros(k)
    alpha[0] = 1.0
    return PhaseType(alpha, S, normalize_mean=normalize_mean)


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class AssumptionReport:
    """Numerical diagnosis of the regularity and tail assumptions."""

    family: str
    h_sup: float
    h_sup_argmax: float
    h2_sup: float
    h2_sup_argmax: float
    hazard_limits: tuple[float, float]
    h2_limits: tuple[float, float]
    tail_exponent_estimate: float
    mean: float
    second_moment: float
    r_max: float
    ccdf_at_r_max: float
    thresholds: dict = field(default_factory=dict)
    passes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.passes.values())

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "h_sup": self.h_sup,
            "h_sup_argmax": self.h_sup_argmax,
            "h2_sup": self.h2_sup,
            "h2_sup_argmax": self.h2_sup_argmax,
            "hazard_limits": list(self.hazard_limits),
            "h2_limits": list(self.h2_limits),
            "tail_exponent_estimate": self.tail_exponent_estimate,
            "mean": self.mean,
            "second_moment": self.second_moment,
            "r_max": self.r_max,
            "ccdf_at_r_max": self.ccdf_at_r_max,
            "thresholds": dict(self.thresholds),
            "pass": dict(self.passes),
            "pass_all": self.passed,
        }


def default_age_grid(d: ServiceDistribution, step: float = 1e-2, tail: float = 1e-6) -> np.ndarray:
    r_max = d.tail_quantile(tail)
    n = max(int(math.ceil(r_max / step)), 10)
    return np.linspace(0.0, n * step, n + 1)


def check_assumptions(d: ServiceDistribution, grid: np.ndarray | None = None,
                      bound: float = 1e6, min_tail_exponent: float = 2.0) -> AssumptionReport:
    """Check bounded hazard, bounded g'/Gbar and the (2+eps)-moment tail.

    Failures are reported through the ``passes`` flags, never raised.
    """
    ages = default_age_grid(d) if grid is None else np.asarray(grid, dtype=float)
    h = d.hazard(ages)
    h2 = d.h2(ages)
    hl = tuple(float(v) for v in d.hazard_limits())
    h2l = tuple(float(v) for v in d.h2_limits())

    h_cands = np.concatenate([h, [hl[0], hl[1]]])
    h_sup = float(np.nanmax(h_cands))
    i_h = int(np.nanargmax(h))
    h_arg = float(ages[i_h])
    if hl[1] > h[i_h]:
        h_arg = math.inf
    abs2 = np.abs(h2)
    h2_cands = np.concatenate([abs2, np.abs(h2l)])
    h2_sup = float(np.nanmax(h2_cands))
    i_2 = int(np.nanargmax(abs2))
    h2_arg = float(ages[i_2])
    if abs(h2l[1]) > abs2[i_2]:
        h2_arg = math.inf
    if abs(h2l[0]) > abs2[i_2]:
        h2_arg = 0.0

    sf = d.ccdf(ages)
    mean_q = float(np.trapezoid(sf, ages))
    second_q = float(np.trapezoid(2.0 * ages * sf, ages))

    r_max = float(ages[-1])
    window = (ages >= r_max / 10.0) & (ages > 0)
    logsf = d.log_ccdf(ages[window])
    slope = np.polyfit(np.log(ages[window]), logsf, 1)[0]
    tail_exp = float(-slope)

    finite_bounded = lambda v: bool(np.isfinite(v) and v < bound)  # noqa: E731
    passes = {
        "density_continuous": bool(np.all(np.isfinite(d.pdf(ages[1:])))),
        "hazard_bounded": finite_bounded(h_sup),
        "h2_bounded": finite_bounded(h2_sup),
        "tail_moment": bool(tail_exp > min_tail_exponent and np.isfinite(second_q)),
    }
    return AssumptionReport(
        family=d.family,
        h_sup=h_sup,
        h_sup_argmax=h_arg,
        h2_sup=h2_sup,
        h2_sup_argmax=h2_arg,
        hazard_limits=hl,
        h2_limits=h2l,
        tail_exponent_estimate=tail_exp,
        mean=mean_q,
        second_moment=second_q,
        r_max=r_max,
        ccdf_at_r_max=float(sf[-1]),
        thresholds={"bound": bound, "min_tail_exponent": min_tail_exponent},
        passes=passes,
    )
