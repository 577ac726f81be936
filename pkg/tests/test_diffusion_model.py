"""Tests for the CMS map, the explicit diffusion model and its identities."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hwspde.diffusion_model import (
    StationaryConfig,
    build_diffusion,
    bump_perturbation,
    canonical_state,
    cms_map,
    estimate_stationary,
    markov_shift_check,
    markov_shift_report,
    replication_seed,
    simulate_x_batch,
    spde_residual,
    spde_residual_paths,
    transport_solution,
)
from hwspde.distributions import Exponential, Gamma, LogNormal, Lomax, erlang
from hwspde.function_grid import H1GridFunction, SimulationGrid, StatePoint, TimePath, h1_norm
from hwspde.noise import BrownianPath, NoiseField

import oracles

LOMAX = Lomax(3.0, 2.0)


def make_path(d=LOMAX, x0=0.3, seed=1, dt=0.01, t_max=2.0, r_max=10.0, perturbation=None, **kw):
    g = SimulationGrid(dt, t_max, r_max)
    y0 = canonical_state(x0, d, r_max, dt, perturbation)
    B = BrownianPath.generate(t_max, dt, seed)
    M = NoiseField.generate(d, g, seed)
    return build_diffusion(y0, B, M, d, kw.pop("sigma", 1.0), kw.pop("beta", 0.5), **kw)


class TestCMSMap:
    def test_zero_input(self):
        z = TimePath.zeros(2.0, 200)
        out = cms_map(z, 0.0, z, LOMAX)
        assert np.all(out.kappa.values == 0.0) and np.all(out.x.values == 0.0)

    def test_exponential_ramp_closed_form(self):
        # r = t - (g * t) + Gbar(t) = 1 for exponential service, so x = 1 + t
        eta = TimePath.from_callable(lambda t: t, 2.0, 200)
        out = cms_map(eta, 1.0, TimePath.zeros(2.0, 200), Exponential())
        assert np.max(np.abs(out.x.values - (1 + eta.t))) < 1e-4

    def test_against_picard_oracle(self):
        d = Exponential()
        dt = 1e-2
        eta = TimePath.from_callable(lambda t: t, 2.0, 200)
        out = cms_map(eta, 1.0, TimePath.zeros(2.0, 200), d)
        r_fn = lambda t: t - (t - 1 + np.exp(-t)) + np.exp(-t)  # noqa: E731
        _, x_f = oracles.picard_volterra_plus(r_fn, d.pdf, 2.0, dt / 16)
        assert np.max(np.abs(out.x.values - x_f[::16])) < 5e-3

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), cut=st.integers(1, 199), x0=st.floats(-1.0, 1.0))
    def test_non_anticipative(self, seed, cut, x0):
        rng = np.random.default_rng(seed)
        eta1 = np.concatenate([[0.0], np.cumsum(rng.normal(size=200)) * 0.1])
        zeta1 = np.concatenate([[min(x0, 0.0)], rng.normal(size=200) * 0.3])
        eta2, zeta2 = eta1.copy(), zeta1.copy()
        eta2[cut + 1:] += rng.normal(size=200 - cut)
        zeta2[cut + 1:] -= 1.0
        a = cms_map(TimePath(2.0, 200, eta1), x0, TimePath(2.0, 200, zeta1), LOMAX)
        b = cms_map(TimePath(2.0, 200, eta2), x0, TimePath(2.0, 200, zeta2), LOMAX)
        np.testing.assert_array_equal(a.x.values[: cut + 1], b.x.values[: cut + 1])
        np.testing.assert_array_equal(a.kappa.values[: cut + 1], b.kappa.values[: cut + 1])

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), x0=st.floats(-2.0, 2.0))
    def test_residuals_small(self, seed, x0):
        rng = np.random.default_rng(seed)
        eta = np.concatenate([[0.0], np.cumsum(rng.normal(size=100)) * 0.2])
        zeta = np.concatenate([[min(x0, 0.0)], np.cumsum(rng.normal(size=100)) * 0.2])
        out = cms_map(TimePath(1.0, 100, eta), x0, TimePath(1.0, 100, zeta), Gamma(2.0, 2.0))
        assert out.residual_first < 1e-12 and out.residual_second < 1e-12
        assert out.kappa.values[0] == 0.0

    def test_preconditions(self):
        z = TimePath.zeros(1.0, 10)
        with pytest.raises(ValueError):
            cms_map(TimePath.from_callable(lambda t: t + 1, 1.0, 10), 0.0, z, LOMAX)
        with pytest.raises(ValueError):
            cms_map(z, -1.0, z, LOMAX)


class TestCanonicalState:
    def test_membership_and_values(self):
        y = canonical_state(-0.7, LOMAX, 5.0, 0.01, bump_perturbation([0.4], [2.0]))
        assert y.z.values[0] == -0.7
        r = y.z.r
        np.testing.assert_allclose(y.z.values[1:], (-0.7 * LOMAX.ccdf(r) + 0.4 * r * np.exp(-2 * r))[1:], rtol=1e-13)

    def test_perturbation_must_vanish_at_zero(self):
        bad = (lambda r: np.ones_like(r), lambda r: np.zeros_like(r))
        with pytest.raises(ValueError):
            canonical_state(0.0, LOMAX, 5.0, 0.01, bad)

    def test_analytic_tail(self):
        y = canonical_state(-1.0, Exponential(), 2.0, 0.1)
        ext = y.z.base.extended(40)
        np.testing.assert_allclose(ext[21:], -np.exp(-np.arange(21, 41) * 0.1), rtol=1e-12)


class TestBuildDiffusion:
    def test_zero_noise_zero_state(self):
        g = SimulationGrid(0.05, 2.0, 5.0)
        d = LOMAX
        y0 = canonical_state(0.0, d, 5.0, 0.05)
        p = build_diffusion(y0, BrownianPath.zeros(2.0, 0.05), NoiseField.zeros(g), d, 1.0, 0.0,
                            allow_nonpositive_beta=True)
        assert np.all(p.X.values == 0.0)
        assert np.all(p.Z_values == 0.0) and np.all(p.Z_derivs == 0.0)

    def test_beta_positive_enforced(self):
        with pytest.raises(ValueError):
            make_path(beta=0.0)

    @pytest.mark.parametrize("d", [Exponential(), LOMAX, LogNormal(0.0, 0.5), Gamma(2.0, 2.0), erlang(2)],
                             ids=["exponential", "lomax", "lognormal", "gamma", "erlang"])
    def test_boundary_invariant(self, d):
        for seed in range(3):
            p = make_path(d, x0=0.2 - 0.3 * seed, seed=seed, t_max=1.0, r_max=8.0)
            assert p.boundary_defect() < 1e-6

    def test_start_values(self):
        p = make_path(x0=0.4)
        assert p.K.values[0] == 0.0
        assert p.X.values[0] == 0.4

    def test_k_identity(self):
        p = make_path(x0=0.3, seed=3)
        t = p.X.t
        rhs = p.sigma * p.B.values - p.beta * t - np.maximum(p.X.values, 0.0) + 0.3
        assert np.max(np.abs(p.K.values - rhs)) < 1e-12

    def test_exponential_collapse(self):
        d = Exponential()
        p = make_path(d, x0=-0.5, seed=2, t_max=2.0, r_max=12.0, snapshot_stride=5)
        r = p.snapshot(0).r
        for n in p.snapshot_index:
            z = p.snapshot(int(n)).values
            assert np.max(np.abs(z - np.exp(-r) * z[0])) < 1e-6

    def test_derivative_compatible_with_values(self):
        p = make_path(seed=5, perturbation=bump_perturbation([0.5], [1.0]))
        for n in p.snapshot_index:
            z = p.snapshot(int(n))
            fd = np.diff(z.values) / z.dr
            avg = 0.5 * (z.derivs[1:] + z.derivs[:-1])
            assert np.max(np.abs(fd - avg)[1:]) < z.dr

    def test_snapshot_matches_point_evaluation(self):
        p = make_path(seed=6, snapshots=[0.5, 1.3])
        for t in (0.5, 1.3):
            n = int(round(t / p.dt))
            snap = p.snapshot_at(t)
            for k in (0, 3, 50, 400):
                v, dv = p.z_point(n, k)
                assert snap.values[k] == pytest.approx(v, abs=1e-12)
                assert snap.derivs[k] == pytest.approx(dv, abs=1e-12)

    def test_deterministic_replay(self):
        a = make_path(seed=9)
        b = make_path(seed=9)
        np.testing.assert_array_equal(a.X.values, b.X.values)
        np.testing.assert_array_equal(a.Z_values, b.Z_values)

    def test_h1_continuity_trend(self):
        # mean squared H1 increment over a lag delta shrinks as delta shrinks
        d = LOMAX
        dt = 0.005
        deltas = [0.16, 0.04, 0.01]
        acc = np.zeros(len(deltas))
        for seed in range(10):
            p = make_path(d, x0=0.2, seed=seed, dt=dt, t_max=1.0, r_max=8.0,
                          snapshots=[0.5] + [0.5 + x for x in deltas])
            a = p.snapshot_at(0.5)
            for i, x in enumerate(deltas):
                b = p.snapshot_at(0.5 + x)
                acc[i] += h1_norm(H1GridFunction.from_arrays(8.0, b.values - a.values, b.derivs - a.derivs)) ** 2
        assert acc[0] > acc[1] > acc[2]

    def test_misaligned_grid_rejected(self):
        d = LOMAX
        y0 = canonical_state(0.0, d, 5.0, 0.01)
        with pytest.raises(ValueError):
            build_diffusion(y0, BrownianPath.generate(1.0, 0.02, 0),
                            NoiseField.generate(d, SimulationGrid(0.02, 1.0, 5.0), 0), d, 1.0, 0.5)


class TestSPDEResidual:
    def test_zero_time(self):
        p = make_path()
        assert spde_residual(p, 0.0, 0.5) == (0.0, 0.0)

    def test_residuals_small_and_first_order(self):
        d = Gamma(2.0, 2.0)
        fine = 0.0025
        g = SimulationGrid(fine, 1.0, 12.0)
        B = BrownianPath.generate(1.0, fine, 0)
        M = NoiseField.generate(d, g, 0)
        errs = []
        for f in (4, 2, 1):
            dt = fine * f
            y0 = canonical_state(0.5, d, 12.0, dt)
            p = build_diffusion(y0, B.coarsen(f) if f > 1 else B, M.coarsen(f) if f > 1 else M, d, 1.0, 0.5,
                                snapshots=[])
            rp = spde_residual_paths(p, int(round(0.5 / dt)))
            errs.append(max(np.max(np.abs(rp.res_z)), np.max(np.abs(rp.res_x))))
        assert errs[0] < 0.1
        assert math.log2(errs[0] / errs[1]) > 0.9 and math.log2(errs[1] / errs[2]) > 0.9

    def test_closed_form_integral_agrees(self):
        p = make_path(seed=2)
        rp = spde_residual_paths(p, 20)
        assert np.max(np.abs(rp.int_quadrature - rp.int_closed_form)) < 0.05


class TestTransport:
    def test_zero(self):
        xi, res = transport_solution(TimePath.zeros(1.0, 100), LOMAX, 1.0, 3.0)
        assert np.all(xi.values == 0.0) and res == 0.0

    def test_exponential_ramp(self):
        F = TimePath.from_callable(lambda t: t, 1.0, 100)
        xi, res = transport_solution(F, Exponential(), 1.0, 3.0)
        assert np.max(np.abs(xi.values - np.exp(-xi.r) * (1 - math.exp(-1.0)))) < 10 * F.dt**2
        assert res < F.dt**2

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_random_data_residual(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=3)
        w = rng.uniform(0.5, 4.0, size=3)
        F = TimePath.from_callable(lambda t: np.sum(a * np.sin(np.outer(t, w)), axis=1), 1.0, 100)
        _, res = transport_solution(F, LOMAX, 1.0, 3.0)
        assert res < 10 * F.dt**2

    def test_nonzero_start_rejected(self):
        with pytest.raises(ValueError):
            transport_solution(TimePath.from_callable(lambda t: 1 + t, 1.0, 10), LOMAX, 1.0, 1.0)


class TestMarkovShift:
    def test_zero_shift(self):
        p = make_path(perturbation=bump_perturbation([0.5], [1.0]))
        rz, rl = markov_shift_check(p, 0.0, 1.0, 0.5)
        assert abs(rz) < 1e-12 and rl < 1e-12

    def test_gamma_telescoping(self):
        p = make_path(seed=3)
        for s, t, r in [(0.7, 1.0, 0.5), (0.3, 0.5, 0.0), (1.0, 1.0, 2.0)]:
            rep = markov_shift_report(p, s, t, r)
            ks = abs(p.K(s))
            assert abs(rep.gamma_telescoping) <= t * p.dt**2 * ks * 3.0 + 1e-14

    def test_residuals_shrink(self):
        d = LOMAX
        fine = 0.0025
        g = SimulationGrid(fine, 1.0, 10.0)
        B = BrownianPath.generate(1.0, fine, 1)
        M = NoiseField.generate(d, g, 1)
        errs = []
        for f in (4, 2, 1):
            dt = fine * f
            y0 = canonical_state(0.2, d, 10.0, dt)
            p = build_diffusion(y0, B.coarsen(f) if f > 1 else B, M.coarsen(f) if f > 1 else M, d, 1.0, 0.5,
                                snapshots=[])
            rep = markov_shift_report(p, 0.5, 0.5, 0.5)
            errs.append(max(abs(rep.res_zshift), rep.res_lambda))
        assert errs[0] / errs[1] > 1.8 and errs[1] / errs[2] > 1.8

    def test_horizon_checked(self):
        with pytest.raises(ValueError):
            markov_shift_check(make_path(t_max=1.0), 0.6, 0.6, 0.0)


class TestStationary:
    def test_batch_matches_full_construction(self):
        d = LOMAX
        seeds = [replication_seed(3, i) for i in range(4)]
        _, X = simulate_x_batch(d, 0.3, 1.0, 0.5, 0.02, 1.0, seeds, r_max=10.0)
        for row, s in enumerate(seeds):
            p = make_path(d, x0=0.3, seed=s, dt=0.02, t_max=1.0, r_max=10.0, snapshots=[])
            np.testing.assert_allclose(X[row], p.X.values, atol=1e-13)

    def test_large_beta_pushes_negative(self):
        est = estimate_stationary(StationaryConfig(Exponential(), beta=5.0, dt=0.02, t_max=4.0, reps=300, seed=1))
        s = est.summary()
        # below zero the exponential case is mean reverting to -beta with unit variance
        assert s["x_T"]["mean"] < -4.0
        assert abs(s["x_T"]["var"] - 1.0) < 3 * s["x_T"]["var_se"]
        assert s["p_x_positive"] < 0.01
        assert s["boundary_max"] < 1e-6

    def test_initial_condition_forgotten(self):
        cfg = dict(d=Exponential(), beta=2.0, dt=0.05, t_max=6.0, reps=400)
        a = estimate_stationary(StationaryConfig(x0=1.0, seed=11, **cfg)).summary()["x_T"]
        b = estimate_stationary(StationaryConfig(x0=-1.0, seed=12, **cfg)).summary()["x_T"]
        assert abs(a["mean"] - b["mean"]) < 3 * math.hypot(a["mean_se"], b["mean_se"])
        assert abs(a["var"] - b["var"]) < 3 * math.hypot(a["var_se"], b["var_se"])

    def test_replication_seeds_distinct(self):
        seeds = {replication_seed(0, i) for i in range(1000)}
        assert len(seeds) == 1000

    def test_state_point_type(self):
        y = canonical_state(1.0, LOMAX, 2.0, 0.1)
        assert isinstance(y, StatePoint)
