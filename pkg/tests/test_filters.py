"""Particle filter, reweighting, weak-form residuals, and the mass machinery."""

import numpy as np
import pytest

from filterlab import oracles
from filterlab import testfunctions as tf
from filterlab.filters import (girsanov_log_weights, ks_residual, mass_process,
                               reconstruct_unnormalized, run_filter, zakai_residual)
from filterlab.measure import integrate, normalize
from filterlab.model import builtin_scenarios
from filterlab.sde import TimeGrid, simulate_joint

from util import scalar_scenario


class TestGirsanovWeights:
    def test_zero_h2_gives_unit_weights(self):
        spec = scalar_scenario(f=lambda x: -x, g=0.5, g_bar=0.3, k=1.0,
                               x0_std=1.0, dt=0.01)
        b = simulate_joint(spec, seed=1)
        run = run_filter(spec, b.y_path[0], n_particles=50, seed=2)
        assert np.array_equal(run.log_weights, np.zeros_like(run.log_weights))
        assert np.array_equal(run.mass, np.ones_like(run.mass))

    def test_constant_h2_closed_form(self):
        # log Zt_T = c WtildeT - c^2 T / 2, checkable per path
        c = 0.8
        spec = scalar_scenario(f=0.0, g=0.4, g_bar=0.2, h2=c, k=1.0,
                               x0_std=1.0, dt=0.01)
        b = simulate_joint(spec, n_paths=6, measure="reference", seed=3)
        x_path = np.swapaxes(b.x_path, 0, 1)       # (n+1, N, d)
        y_path = np.swapaxes(b.y_path, 0, 1)
        w_tilde = np.swapaxes(b.w_tilde, 0, 1)
        logw = girsanov_log_weights(spec.coeffs, b.grid, x_path, y_path, w_tilde)
        wt_total = b.w_tilde.sum(axis=1)[:, 0]
        expected = c * wt_total - 0.5 * c**2 * spec.horizon
        assert np.allclose(logw[-1], expected, atol=1e-12)

    def test_weight_mean_is_martingale(self):
        # unconditional copies under the reference measure: E[Zt_T] = 1
        spec = builtin_scenarios()["correlated_bounded"].with_updates(dt=2e-3)
        n = 10_000
        b = simulate_joint(spec, n_paths=n, measure="reference", seed=4)
        logw = girsanov_log_weights(spec.coeffs, b.grid,
                                    np.swapaxes(b.x_path, 0, 1),
                                    np.swapaxes(b.y_path, 0, 1),
                                    np.swapaxes(b.w_tilde, 0, 1))
        zt = np.exp(logw[-1])
        se = zt.std(ddof=1) / np.sqrt(n)
        assert abs(zt.mean() - 1.0) <= 3 * se


class TestFilterRun:
    def test_initial_ensemble_is_probability(self):
        spec = builtin_scenarios()["correlated_bounded"].with_updates(dt=0.01)
        b = simulate_joint(spec, seed=5)
        run = run_filter(spec, b.y_path[0], n_particles=64, seed=6)
        assert run.ensemble(0).mass == pytest.approx(1.0)
        assert run.ess[0] == 64

    def test_unit_weights_when_uninformative(self):
        # h2 = 0 with invertible k: weights stay exactly 1
        spec = scalar_scenario(f=lambda x: np.sin(x), g=0.5, g_bar=0.3, k=1.0,
                               x0_std=0.5, dt=0.01)
        b = simulate_joint(spec, seed=7)
        run = run_filter(spec, b.y_path[0], n_particles=32, seed=8)
        assert np.array_equal(run.weights(50), np.full(32, 1.0 / 32))

    def test_normalized_mass_exactly_one(self):
        spec = builtin_scenarios()["correlated_bounded"].with_updates(dt=0.01)
        b = simulate_joint(spec, seed=9)
        run = run_filter(spec, b.y_path[0], n_particles=128, seed=10)
        for i in (0, 40, 100):
            nu = normalize(run.ensemble(i))
            assert nu.mass == 1.0

    def test_ks_equals_zakai_ratio(self):
        spec = builtin_scenarios()["correlated_bounded"].with_updates(dt=0.01)
        b = simulate_joint(spec, seed=11)
        run = run_filter(spec, b.y_path[0], n_particles=128, seed=12)
        phi = tf.gaussian_bump()
        for i in (10, 100):
            pi_phi = integrate(run.ensemble(i), phi)
            pi_one = run.ensemble(i).mass
            assert run.estimate(phi, i) == pytest.approx(pi_phi / pi_one, rel=1e-12)

    def test_determinism(self):
        spec = builtin_scenarios()["decoupled_classical"].with_updates(dt=0.01)
        b = simulate_joint(spec, seed=13)
        r1 = run_filter(spec, b.y_path[0], n_particles=40, seed=14)
        r2 = run_filter(spec, b.y_path[0], n_particles=40, seed=14)
        assert np.array_equal(r1.x_path, r2.x_path)
        assert np.array_equal(r1.log_weights, r2.log_weights)

    def test_resampling_preserves_mass_scale(self):
        spec = builtin_scenarios()["correlated_bounded"].with_updates(dt=0.01)
        b = simulate_joint(spec, seed=15)
        run = run_filter(spec, b.y_path[0], n_particles=64, seed=16,
                         resample=True, resample_fraction=0.99)
        assert run.diagnostics["resampled_at"]
        assert np.all(np.isfinite(run.mass))
        # weights after a resampling step are uniform at the carried mass
        i = run.diagnostics["resampled_at"][0]
        w = run.weights(i)
        assert np.allclose(w, w[0])
        assert w.sum() == pytest.approx(run.mass[i])


class TestDegenerateCollapse:
    def test_filter_matches_prior_monte_carlo(self):
        spec = builtin_scenarios()["degenerate_k0"].with_updates(dt=2e-3)
        n = 4000
        b = simulate_joint(spec, seed=17)
        run = run_filter(spec, b.y_path[0], n_particles=n, seed=18)
        prior = simulate_joint(spec, n_paths=n, seed=19)

        for phi in (tf.tanh_ramp(1.0), tf.gaussian_bump()):
            for idx in (len(run.grid.times) // 2, -1):
                est = run.estimate(phi, idx, normalized=False)
                w = run.weights(idx)
                vals = phi.value(run.x_path[idx])
                se_f = np.std(w * vals * n, ddof=1) / np.sqrt(n)
                mc = phi.value(prior.x_path[:, idx][:, :])
                se_p = mc.std(ddof=1) / np.sqrt(n)
                tol = 3 * np.hypot(se_f, se_p)
                assert abs(est - mc.mean()) <= tol

    def test_stochastic_residual_term_identically_zero(self):
        spec = builtin_scenarios()["degenerate_k0"].with_updates(dt=5e-3)
        b = simulate_joint(spec, seed=20)
        run = run_filter(spec, b.y_path[0], n_particles=100, seed=21)
        _, _, sto = zakai_residual(run, tf.gaussian_bump(), return_parts=True)
        assert np.array_equal(sto, np.zeros_like(sto))


class TestKalmanBucyOracle:
    def test_riccati_fixed_point(self):
        p = builtin_scenarios()["linear_gaussian"].meta
        # stationary variance solves 0 = 2FP + g^2 + gbar^2 - (gbar + HP)^2
        from numpy.polynomial import polynomial as npoly
        coeffs = [p["g"] ** 2 + p["g_bar"] ** 2 - p["g_bar"] ** 2,
                  2 * p["F"] - 2 * p["H"] * p["g_bar"], -p["H"] ** 2]
        roots = npoly.polyroots(coeffs)
        p_star = max(roots)
        grid = TimeGrid(6.0, 6000)
        y = np.zeros((6001, 1))  # innovation terms do not enter the variance
        params = dict(p, s0=np.sqrt(p_star))
        _, var = oracles.kalman_bucy_path(params, grid, y)
        assert var[-1] == pytest.approx(p_star, rel=1e-6)

    def test_no_information_reduces_to_prior_variance(self):
        p = dict(builtin_scenarios()["linear_gaussian"].meta, H=0.0, g_bar=0.0)
        grid = TimeGrid(1.0, 1000)
        _, var = oracles.kalman_bucy_path(p, grid, np.zeros((1001, 1)))
        _, v_exact = oracles.ou_moments(p["F"], p["f0"], p["g"] ** 2, p["m0"],
                                        p["s0"] ** 2, 1.0)
        assert var[-1] == pytest.approx(v_exact, rel=1e-8)

    def test_filter_tracks_oracle(self):
        spec = builtin_scenarios()["linear_gaussian"].with_updates(dt=2e-3)
        b = simulate_joint(spec, seed=22)
        run = run_filter(spec, b.y_path[0], n_particles=4000, seed=23)
        m, v = oracles.kalman_bucy_path(spec.meta, b.grid, b.y_path[0])
        w = run.normalized_weights(-1)
        x = run.x_path[-1][:, 0]
        mean_est = w @ x
        var_est = w @ (x - mean_est) ** 2
        assert abs(mean_est - m[-1]) <= 0.08
        assert abs(var_est - v[-1]) <= 0.05


class TestMassMachinery:
    def test_uninformative_mass_is_one(self):
        spec = scalar_scenario(f=lambda x: -x, g=0.5, g_bar=0.2, k=1.0,
                               x0_std=0.4, dt=0.01)
        b = simulate_joint(spec, seed=24)
        run = run_filter(spec, b.y_path[0], n_particles=32, seed=25)
        assert np.array_equal(mass_process(run), np.ones(101))

    def test_degenerate_k_mass_is_one(self):
        spec = builtin_scenarios()["degenerate_k0"].with_updates(dt=0.01)
        b = simulate_joint(spec, seed=26)
        run = run_filter(spec, b.y_path[0], n_particles=32, seed=27)
        assert np.array_equal(mass_process(run), np.ones(101))

    def test_mass_tracks_weight_mass(self):
        spec = builtin_scenarios()["correlated_bounded"].with_updates(dt=1e-3)
        b = simulate_joint(spec, seed=28)
        run = run_filter(spec, b.y_path[0], n_particles=2000, seed=29)
        j = mass_process(run)
        rel = np.abs(j - run.mass) / run.mass
        assert rel.max() <= 0.05

    def test_reconstruction_identity_and_negative_control(self):
        spec = builtin_scenarios()["correlated_bounded"].with_updates(dt=2e-3)
        b = simulate_joint(spec, seed=30)
        run = run_filter(spec, b.y_path[0], n_particles=500, seed=31)
        ones = np.ones(run.grid.n_steps + 1)
        w_identity = reconstruct_unnormalized(run, ones)
        for i in (0, 250, 500):
            assert np.allclose(w_identity[i], run.normalized_weights(i))

        phi = tf.constant_one()
        # j is defined by the phi = 1 recursion, so the reconstructed measure
        # satisfies the discrete mass identity exactly
        honest = zakai_residual(run, phi,
                                weights=reconstruct_unnormalized(run, mass_process(run)))
        assert np.abs(honest).max() < 1e-10
        # a synthetic constant mass 2 lacks the stochastic-integral term and
        # the defect accumulates as the (scaled) integral itself
        broken = zakai_residual(run, phi, weights=reconstruct_unnormalized(run, 2 * ones))
        assert np.abs(broken).max() > 0.1

    def test_reconstruction_roundtrip_residual_same_order(self):
        spec = builtin_scenarios()["correlated_bounded"].with_updates(dt=2e-3)
        b = simulate_joint(spec, seed=38)
        run = run_filter(spec, b.y_path[0], n_particles=2000, seed=39)
        phi = tf.gaussian_bump()
        original = np.abs(zakai_residual(run, phi)).max()
        rebuilt = np.abs(zakai_residual(
            run, phi, weights=reconstruct_unnormalized(run, mass_process(run)))).max()
        assert rebuilt <= 3 * original + 0.01


class TestResiduals:
    def test_mass_residual_equals_totalmass_identity(self):
        # phi = 1: A phi = 0 and grad phi = 0; the residual reduces to
        # pi_t(1) - 1 - sum pi(h2^T) k+ dN
        spec = builtin_scenarios()["correlated_bounded"].with_updates(dt=5e-3)
        b = simulate_joint(spec, seed=32)
        run = run_filter(spec, b.y_path[0], n_particles=300, seed=33)
        res, dt_terms, sto = zakai_residual(run, tf.constant_one(), return_parts=True)
        assert np.array_equal(dt_terms, np.zeros_like(dt_terms))
        manual = run.mass - 1.0
        manual[1:] -= np.cumsum(sto)
        assert np.allclose(res, manual, atol=1e-12)

    def test_zakai_residual_shrinks_with_dt(self):
        # the defect has a sqrt(dt) part plus a 1/sqrt(N) Monte Carlo floor;
        # the refinement scenario keeps the floor negligible
        spec = builtin_scenarios()["refinement_study"]
        phi = tf.tanh_ramp(1.0)
        errs = []
        for factor in (4, 1):
            acc = []
            for rep in range(4):
                fine = simulate_joint(spec, seed=100 + rep)
                grid = fine.grid.coarsen(factor)
                y = fine.y_path[0][::factor]
                run = run_filter(spec.with_updates(dt=grid.dt), y, n_particles=4000,
                                 seed=35, replica=rep, grid=grid)
                acc.append(np.abs(zakai_residual(run, phi)).max())
            errs.append(np.mean(acc))
        assert errs[1] < errs[0]

    def test_ks_residual_small_and_shrinking(self):
        spec = builtin_scenarios()["refinement_study"]
        phi = tf.tanh_ramp(1.0)
        errs = []
        for factor in (4, 1):
            acc = []
            for rep in range(4):
                fine = simulate_joint(spec, seed=200 + rep)
                grid = fine.grid.coarsen(factor)
                y = fine.y_path[0][::factor]
                run = run_filter(spec.with_updates(dt=grid.dt), y, n_particles=4000,
                                 seed=37, replica=rep, grid=grid)
                acc.append(np.abs(ks_residual(run, phi)).max())
            errs.append(np.mean(acc))
        assert errs[1] < errs[0]
