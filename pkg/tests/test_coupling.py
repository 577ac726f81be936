"""Tests for the coupled pair, the Delta R bound and the Girsanov weight."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hwspde.coupling import (
    bound_constants,
    build_coupled,
    coupled_from_seed,
    decay_report,
    delta_r_bound_check,
    delta_r_paths_agree,
    girsanov_batch,
    girsanov_weight,
    tilde_cms_check,
)
from hwspde.diffusion_model import bump_perturbation, canonical_state, replication_seed
from hwspde.distributions import Exponential, Gamma, Lomax
from hwspde.kernels import trap_cumint

LOMAX = Lomax(3.0, 2.0)
R_MAX = 10.0


def pair_for(x0=1.0, x0t=0.2, lam=1.0, d=LOMAX, seed=3, dt=0.01, t_max=2.0, pert=None, pert_t=None,
             snapshots=None):
    y = canonical_state(x0, d, R_MAX, dt, pert)
    yt = canonical_state(x0t, d, R_MAX, dt, pert_t)
    return coupled_from_seed(d, y, yt, lam, 1.0, 0.5, dt, t_max, seed, snapshots=snapshots)


def solver_tolerance(p):
    """Renewal solve residual plus the quadrature defects of the coupled identities."""
    return p.diagnostics["renewal_residual"] + p.diagnostics["quadrature_tolerance"]


@pytest.fixture(scope="module")
def pair():
    return pair_for(pert=bump_perturbation([0.3], [1.0]), snapshots=[0.5, 1.0, 2.0])


class TestIdenticalStarts:
    def test_difference_processes_vanish(self):
        p = pair_for(x0=0.5, x0t=0.5)
        for arr in (p.delta_x, p.delta_x_minus, p.delta_R, p.delta_K, p.m.values, p.logN.values):
            assert np.all(np.asarray(arr) == 0.0)
        np.testing.assert_array_equal(p.Ytilde.X.values, p.Y.X.values)

    def test_decay_table_is_zero(self):
        p = pair_for(x0=0.5, x0t=0.5)
        for row in decay_report(p, [0.0, 1.0, 2.0]):
            assert row.abs_delta_x == 0.0 and row.delta_z_h1 == 0.0


class TestCoupledIdentities:
    def test_delta_x_exact(self, pair):
        t = pair.Y.X.t
        assert np.max(np.abs(pair.delta_x - 0.8 * np.exp(-t))) < 1e-8
        assert np.max(np.abs(pair.Y.X.values - pair.Ytilde.X.values - pair.delta_x)) < 1e-12

    def test_tilde_x_integral_equation(self, pair):
        # X~ satisfies its integral equation up to the trapezoid error of int Delta X
        T = pair.Y.X.t_max
        assert pair.diagnostics["tilde_x_integral_residual"] < T * pair.lam * 0.8 * pair.dt**2

    def test_delta_k_identity(self, pair):
        dg = pair.diagnostics
        assert dg["delta_k_identity_residual"] <= dg["delta_k_tolerance"]

    def test_tilde_boundary(self, pair):
        assert pair.diagnostics["tilde_boundary_defect"] <= solver_tolerance(pair)

    def test_tilde_snapshots_at_boundary(self, pair):
        for n in pair.Ytilde.snapshot_index:
            z = pair.Ytilde.snapshot(int(n))
            assert abs(z.values[0] - min(pair.Ytilde.X.values[n], 0.0)) <= solver_tolerance(pair)

    def test_tilde_cms(self, pair):
        res = tilde_cms_check(pair)
        assert res["x_residual"] <= solver_tolerance(pair) and res["k_residual"] <= solver_tolerance(pair)

    def test_tilde_defects_second_order(self):
        pert = bump_perturbation([0.3], [1.0])
        b = [pair_for(pert=pert, dt=dt).diagnostics["tilde_boundary_defect"] for dt in (0.02, 0.01, 0.005)]
        assert b[0] / b[1] > 3.5 and b[1] / b[2] > 3.5

    def test_m_identity(self, pair):
        np.testing.assert_allclose(pair.m.values, -pair.delta_R - pair.lam * pair.delta_x, atol=1e-15)

    def test_delta_r_routes_agree(self, pair):
        assert delta_r_paths_agree(pair)
        dg = pair.diagnostics
        assert dg["delta_r_paths_sup_diff"] <= dg["quadrature_tolerance"] + dg["renewal_residual"] + 1e-12

    def test_delta_k_is_minus_dxm_minus_int_dr(self, pair):
        ref = -pair.delta_x_minus - trap_cumint(pair.delta_R, pair.dt)
        np.testing.assert_allclose(pair.delta_K, ref, atol=1e-14)

    def test_log_weight_is_ito_sum(self, pair):
        m = pair.m.values / pair.Y.sigma
        dB = np.asarray(pair.Y.B.increments)
        ref = np.sum(m[:-1] * dB) - 0.5 * np.sum(m[:-1] ** 2) * pair.dt
        assert pair.logN.values[-1] == pytest.approx(ref, abs=1e-12)
        assert pair.logN.values[0] == 0.0


class TestDecayReport:
    def test_columns_and_decomposition(self, pair):
        rows = decay_report(pair, [0.0, 0.5, 1.0, 2.0])
        assert [r.t for r in rows] == [0.0, 0.5, 1.0, 2.0]
        for r in rows:
            assert r.abs_delta_x == pytest.approx(0.8 * math.exp(-r.t), rel=1e-8)
            assert r.decomposition_defect < 1e-2

    def test_delta_z_matches_tilde_snapshots(self, pair):
        n = int(round(1.0 / pair.dt))
        dz, ddz = pair.delta_z(n)
        np.testing.assert_allclose(pair.Y.snapshot(n).values - pair.Ytilde.snapshot(n).values, dz, atol=1e-12)


class TestDeltaRBound:
    @pytest.mark.parametrize("d", [LOMAX, Exponential(), Gamma(2.0, 2.0)], ids=["lomax", "exponential", "gamma"])
    def test_bound_holds(self, d):
        for seed in range(3):
            p = pair_for(d=d, seed=seed, pert=bump_perturbation([0.2], [1.5]))
            lhs, rhs, ok = delta_r_bound_check(p)
            assert ok and lhs <= rhs

    def test_constants(self):
        c = bound_constants(Exponential(), 2.0, 0.01, 2.0)
        assert c["c2"] == 1.0
        assert c["c1"] == pytest.approx(1.0, abs=1e-2)
        assert c["C"] == pytest.approx(2.0 / 2.0, rel=1e-2)
        assert c["Cbar2"] == pytest.approx(c["Cbar1"] * c["C"])

    @settings(max_examples=10, deadline=None)
    @given(x0=st.floats(0.0, 2.0), x0t=st.floats(0.0, 2.0), lam=st.floats(0.5, 3.0), seed=st.integers(0, 100))
    def test_bound_property(self, x0, x0t, lam, seed):
        p = pair_for(x0=x0, x0t=x0t, lam=lam, seed=seed, dt=0.02, t_max=1.0)
        assert delta_r_bound_check(p).passed


class TestGirsanov:
    def test_bound_holds(self, pair):
        rep = girsanov_weight(pair)
        assert rep.bound_holds
        assert rep.m_l2_sq <= 2 * rep.delta_r_l2_sq + 2 * pair.lam**2 * rep.delta_x_l2_sq + 1e-15

    def test_batch_matches_single_pair(self):
        d = LOMAX
        batch = girsanov_batch(d, 1.0, 0.2, 1.0, 1.0, 0.5, 0.02, 1.0, reps=3, seed=5, r_max=R_MAX)
        for i in range(3):
            p = pair_for(x0=1.0, x0t=0.2, d=d, seed=int(replication_seed(5, i)), dt=0.02, t_max=1.0)
            assert batch.logN_T[i] == pytest.approx(p.logN.values[-1], abs=1e-10)
            assert batch.m_l2_sq[i] == pytest.approx(girsanov_weight(p).m_l2_sq, rel=1e-10)

    @pytest.mark.parametrize("sigma", [1.0, 2.0])
    def test_mean_weight_near_one(self, sigma):
        b = girsanov_batch(Exponential(), 1.0, 0.0, 1.0, sigma, 0.5, 0.05, 2.0, reps=2000, seed=2)
        mean, se = b.mean_and_se()
        assert abs(mean - 1.0) < 3 * se
        assert np.all(b.m_l2_sq <= b.bound)


class TestPreconditions:
    def test_negative_x_rejected(self):
        y = canonical_state(-0.5, LOMAX, R_MAX, 0.01)
        yt = canonical_state(0.5, LOMAX, R_MAX, 0.01)
        with pytest.raises(ValueError):
            coupled_from_seed(LOMAX, y, yt, 1.0, 1.0, 0.5, 0.01, 1.0, 0)
        with pytest.raises(ValueError):
            coupled_from_seed(LOMAX, yt, y, 1.0, 1.0, 0.5, 0.01, 1.0, 0)

    def test_lambda_positive(self):
        y = canonical_state(0.5, LOMAX, R_MAX, 0.01)
        with pytest.raises(ValueError):
            coupled_from_seed(LOMAX, y, y, 0.0, 1.0, 0.5, 0.01, 1.0, 0)

    def test_reuses_given_path(self, pair):
        again = build_coupled(pair.y, pair.ytilde, pair.lam, pair.Y.B, None, pair.Y.d, 1.0, 0.5, path=pair.Y)
        np.testing.assert_array_equal(again.delta_R, pair.delta_R)
