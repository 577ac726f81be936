"""Tests for the discrete-event GI/GI/N simulator and its diffusion scaling."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hwspde.distributions import Exponential, Gamma, Lomax, erlang
from hwspde.queue_sim import (
    QueueConfig,
    fluid_centering,
    matched_sigma,
    run_queue,
    sample_equilibrium_ages,
    scale_state,
)

import oracles


class TestSingleServer:
    def test_fresh_job_profile(self):
        r = (0.0, 0.5, 1.0, 3.0)
        cfg = QueueConfig(N=1, beta=1.0, service=Exponential(), arrival_rate=0.0, initial="explicit",
                          initial_ages=(0.0,), sample_times=(0.0,), r_grid=r, horizon=1.0)
        path = run_queue(cfg)
        np.testing.assert_allclose(path.Z[0], np.exp(-np.array(r)), rtol=1e-14)

    def test_aged_job_lomax_profile(self):
        d = Lomax(3.0, 2.0)
        r = np.array([0.0, 1.0, 2.0])
        cfg = QueueConfig(N=1, beta=1.0, service=d, arrival_rate=0.0, initial="explicit",
                          initial_ages=(1.0,), sample_times=(0.0,), r_grid=tuple(r), horizon=0.0)
        path = run_queue(cfg)
        np.testing.assert_allclose(path.Z[0], d.ccdf(1.0 + r) / d.ccdf(1.0), rtol=1e-12)

    def test_no_arrivals_drains(self):
        cfg = QueueConfig(N=3, beta=1.0, service=Exponential(), arrival_rate=0.0, initial="explicit",
                          initial_ages=(0.0, 0.0, 0.0), initial_waiting=2, horizon=100.0, sample_times=(100.0,))
        path = run_queue(cfg)
        assert path.X[0] == 0 and path.departures[0] == 5 and path.entries[0] == 2


class TestInvariants:
    @settings(max_examples=15, deadline=None)
    @given(N=st.integers(1, 30), beta=st.floats(0.1, 2.0), seed=st.integers(0, 1000))
    def test_conservation_laws(self, N, beta, seed):
        if N - beta * math.sqrt(N) <= 0:
            return
        cfg = QueueConfig(N=N, beta=beta, service=Lomax(3.0, 2.0), interarrival=erlang(2), horizon=5.0,
                          seed=seed, sample_times=(0.0, 2.5, 5.0))
        path = run_queue(cfg)
        assert path.invariant_checks == path.n_events
        np.testing.assert_array_equal(path.X, path.X0 + path.arrivals - path.departures)
        np.testing.assert_array_equal(np.minimum(path.X - N, 0), path.in_service - N)
        np.testing.assert_array_equal(path.entries, path.in_service - path.nu0 + path.departures)

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            QueueConfig(N=0, beta=1.0, service=Exponential())
        with pytest.raises(ValueError):
            QueueConfig(N=4, beta=3.0, service=Exponential())
        with pytest.raises(ValueError):
            QueueConfig(N=2, beta=1.0, service=Exponential(), initial="explicit", initial_ages=(0.0,),
                        initial_waiting=1)
        with pytest.raises(ValueError):
            QueueConfig(N=2, beta=1.0, service=Exponential(), horizon=1.0, sample_times=(2.0,))

    def test_reproducible(self):
        cfg = QueueConfig(N=20, beta=1.0, service=Gamma(2.0, 2.0), horizon=3.0, seed=4,
                          sample_times=(1.0, 3.0), r_grid=(0.0, 1.0))
        a, b = run_queue(cfg), run_queue(cfg)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.Z, b.Z)


class TestMMN:
    def test_busy_fraction_against_birth_death_law(self):
        N, lam = 5, 3.0
        T, burn = 2000.0, 100.0
        cfg = QueueConfig(N=N, beta=1.0, service=Exponential(), arrival_rate=lam, initial="empty",
                          horizon=T, seed=1, busy_bin=burn)
        path = run_queue(cfg)
        batches = path.busy_integral[1:] / (burn * N)
        se = batches.std(ddof=1) / math.sqrt(batches.size)
        ref = oracles.mmn_busy_fraction(lam, N)
        assert ref == pytest.approx(lam / N, rel=1e-12)
        assert abs(batches.mean() - ref) < 3 * se

    def test_queue_length_law(self):
        N, lam = 5, 4.0
        pi = oracles.mmn_stationary(lam, N)
        mean_ref = float(np.dot(np.arange(pi.size), pi))
        vals = np.array([run_queue(QueueConfig(N=N, beta=1.0, service=Exponential(), arrival_rate=lam,
                                               initial="empty", horizon=60.0, seed=s,
                                               sample_times=(60.0,))).X[0] for s in range(600)])
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - mean_ref) < 3 * se


class TestScaling:
    def test_fluid_start(self):
        d = Lomax(3.0, 2.0)
        r = (0.0, 0.5, 2.0)
        N = 100
        zs = []
        for s in range(300):
            cfg = QueueConfig(N=N, beta=1.0, service=d, horizon=0.0, seed=s, sample_times=(0.0,), r_grid=r)
            sp = scale_state(run_queue(cfg))
            assert sp.X_hat[0] == 0.0
            zs.append(sp.Z_hat[0])
        zs = np.array(zs)
        se = zs.std(axis=0, ddof=1) / math.sqrt(zs.shape[0])
        assert np.all(np.abs(zs.mean(axis=0)) <= 3 * se)

    def test_origin_profile_counts_jobs_in_service(self):
        cfg = QueueConfig(N=30, beta=1.0, service=Gamma(2.0, 2.0), horizon=4.0, seed=2,
                          sample_times=(1.0, 2.0, 4.0), r_grid=(0.0, 1.0))
        path = run_queue(cfg)
        np.testing.assert_allclose(path.Z[:, 0], path.in_service, rtol=1e-12)

    def test_exponential_profile_separates(self):
        r = np.array([0.0, 0.5, 1.0, 2.0])
        cfg = QueueConfig(N=50, beta=1.0, service=Exponential(), horizon=3.0, seed=7,
                          sample_times=(1.0, 3.0), r_grid=tuple(r))
        sp = scale_state(run_queue(cfg))
        np.testing.assert_allclose(sp.Z_hat, sp.Z_hat[:, :1] * np.exp(-r)[None, :], atol=1e-9)

    def test_fluid_centering_closed_forms(self):
        np.testing.assert_allclose(fluid_centering(Exponential(), [0.0, 1.0]), [1.0, math.exp(-1.0)], rtol=1e-9)
        # Lomax(3, 2): int_r^inf (1 + x/2)^{-3} dx = (1 + r/2)^{-2}
        np.testing.assert_allclose(fluid_centering(Lomax(3.0, 2.0), [0.0, 2.0]), [1.0, 0.25], rtol=1e-9)

    def test_matched_sigma(self):
        assert matched_sigma(Exponential()) == pytest.approx(1.0)
        assert matched_sigma(erlang(2)) == pytest.approx(math.sqrt(0.5))

    def test_equilibrium_ages(self):
        from scipy import stats

        d = Lomax(3.0, 2.0)
        a = sample_equilibrium_ages(d, 20_000, np.random.default_rng(0))
        # the age law has cdf 1 - (1 + a/2)^{-2}
        assert stats.kstest(a, lambda x: 1 - (1 + np.maximum(x, 0) / 2) ** -2).pvalue > 1e-3
