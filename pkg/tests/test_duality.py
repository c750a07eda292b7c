"""Exponential probe weights, pairing identity, martingale and orthogonality tests."""

import numpy as np
import pytest

from filterlab import testfunctions as tf
from filterlab.duality import (FrequencyChoice, duality_gap, duality_report,
                               exp_weight_path, martingale_test,
                               obs_exp_weight_path, orthogonality_test,
                               replica_pairing, standard_frequency_probes,
                               uniqueness_probe)
from filterlab.errors import InvalidInputError
from filterlab.gridpde import Grid1D
from filterlab.model import builtin_scenarios
from filterlab.sde import TimeGrid, simulate_joint

from util import scalar_scenario


class TestFrequencyChoice:
    def test_constant_and_piecewise_sampling(self):
        tg = TimeGrid(1.0, 8)
        fr = FrequencyChoice.piecewise([[1.0], [-2.0]], 1.0)
        on = fr.on_grid(tg)
        assert on.shape == (8, 1)
        assert np.array_equal(on[:4, 0], np.ones(4))
        assert np.array_equal(on[4:, 0], -2 * np.ones(4))
        assert fr.sup_norm == 2.0

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            FrequencyChoice("bad", np.array([0.0, 1.0]), np.array([[np.inf]]))
        with pytest.raises(InvalidInputError):
            FrequencyChoice("bad", np.array([1.0, 0.0]), np.array([[1.0]]))

    def test_standard_probe_family(self):
        probes = standard_frequency_probes(2, 1.0)
        assert len(probes) >= 5
        assert any(p.sup_norm == 0 for p in probes)
        assert all(p.sup_norm <= 2 * np.sqrt(2) + 1e-12 for p in probes)
        assert all(len(p.levels) <= 4 for p in probes)


class TestExpWeights:
    def test_zero_frequency_gives_unit_path(self):
        rng = np.random.default_rng(0)
        w = 0.1 * rng.standard_normal((5, 20, 2))
        theta = exp_weight_path(np.zeros((20, 2)), w, 0.05)
        assert np.array_equal(theta, np.ones_like(theta))

    def test_modulus_identity_every_path(self):
        rng = np.random.default_rng(1)
        tg = TimeGrid(1.0, 100)
        fr = FrequencyChoice.piecewise([[2.0], [-1.0]], 1.0)
        fg = fr.on_grid(tg)
        w = np.sqrt(tg.dt) * rng.standard_normal((40, 100, 1))
        theta = exp_weight_path(fg, w, tg.dt)
        expected = np.exp(0.5 * np.cumsum(np.sum(fg**2, axis=1) * tg.dt))
        mods = np.abs(theta)
        assert np.allclose(mods[:, 1:], expected[None, :], rtol=1e-13)
        assert np.std(mods, axis=0).max() <= 1e-13   # deterministic across paths

    def test_multiplicativity(self):
        # theta(r) theta(r') exp(int r.r' ds) = theta(r + r') pathwise
        rng = np.random.default_rng(2)
        tg = TimeGrid(1.0, 64)
        w = np.sqrt(tg.dt) * rng.standard_normal((8, 64, 1))
        r1 = FrequencyChoice.constant(1.0, 1.0).on_grid(tg)
        r2 = FrequencyChoice.piecewise([[2.0], [-1.0]], 1.0).on_grid(tg)
        th1 = exp_weight_path(r1, w, tg.dt)
        th2 = exp_weight_path(r2, w, tg.dt)
        th12 = exp_weight_path(r1 + r2, w, tg.dt)
        cross = np.exp(np.cumsum(np.sum(r1 * r2, axis=1) * tg.dt))
        assert np.allclose(th1[:, 1:] * th2[:, 1:] * cross, th12[:, 1:], atol=1e-12)

    def test_closed_form_matches_sde_euler(self):
        # Euler on d theta = i theta r dWtilde converges to the closed form
        rng = np.random.default_rng(3)
        r = 1.5
        errs = []
        for n in (2_000, 8_000):
            dt = 1.0 / n
            w = np.sqrt(dt) * rng.standard_normal((400, n, 1))
            closed = exp_weight_path(np.full((n, 1), r), w, dt)[:, -1]
            euler = np.ones(400, dtype=complex)
            for i in range(n):
                euler = euler * (1.0 + 1j * r * w[:, i, 0])
            errs.append(np.mean(np.abs(euler - closed)))
        assert errs[1] < errs[0]
        assert errs[1] <= 0.05

    def test_characteristic_function_oracle(self):
        # E[theta_1] = 1, i.e. E[e^{i W_1}] = e^{-1/2}
        rng = np.random.default_rng(4)
        n, reps = 400, 40_000
        w = np.sqrt(1.0 / n) * rng.standard_normal((reps, n, 1))
        theta = exp_weight_path(np.ones((n, 1)), w, 1.0 / n)[:, -1]
        est = (theta * np.exp(-0.5)).mean()
        se = np.abs(theta * np.exp(-0.5) - est).std() / np.sqrt(reps)
        assert abs(est - np.exp(-0.5)) <= 3 * se

    def test_obs_weight_compensator_uses_k(self):
        tg = TimeGrid(1.0, 50)
        k_path = np.tile(np.array([[[2.0]]]), (50, 1, 1))
        dn = np.zeros((1, 50, 1))
        theta = obs_exp_weight_path(np.ones((50, 1)), dn, k_path, tg.dt)
        assert abs(theta[0, -1]) == pytest.approx(np.exp(0.5 * 4.0), rel=1e-12)


class TestDualityGap:
    def test_uninformative_reduces_to_backward_kolmogorov(self):
        # gbar = 0, h2 = 0, r = 0: lhs is E[phi(X_T)], rhs pairs the
        # Kolmogorov solution with the initial law
        spec = scalar_scenario(f=lambda x: -0.8 * np.tanh(0.7 * x), g=1.0, k=1.0,
                               x0_std=0.5, dt=2e-3, n_particles=8)
        spec = spec.with_updates(name="decoupled_plain")
        grid = Grid1D(-9.0, 9.0, 281)
        res = duality_gap(spec, FrequencyChoice.constant(0.0, 1.0, "zero"),
                          tf.gaussian_bump(), n_replicas=3000, grid=grid, seed=5)
        assert res.gap <= 3 * res.se_diff + 0.01
        # theta = 1 and the estimator is real: imaginary parts vanish exactly
        assert res.lhs_mean.imag == 0.0

    def test_constant_phi_no_reweighting_is_exact_ones(self):
        spec = scalar_scenario(f=lambda x: -0.5 * x, g=1.0, k=1.0, x0_std=0.5,
                               dt=2e-3, n_particles=4)
        grid = Grid1D(-12.0, 12.0, 385)
        res = duality_gap(spec, FrequencyChoice.constant(0.0, 1.0, "zero"),
                          tf.constant_one(), n_replicas=500, grid=grid, seed=6)
        # h2 = 0 so every weight is exactly 1; the only defect is the
        # boundary layer of u (deep-interior initial support)
        assert res.lhs_mean == pytest.approx(1.0, abs=1e-12)
        assert res.se_lhs == pytest.approx(0.0, abs=1e-12)
        assert res.gap <= 1e-6

    def test_probe_family_passes(self):
        spec = builtin_scenarios()["decoupled_classical"].with_updates(dt=2e-3)
        grid = Grid1D(-7.0, 7.0, 281)
        rows = duality_report(spec, standard_frequency_probes(1, 1.0),
                              [tf.gaussian_bump(), tf.sech_bump()],
                              n_replicas=2000, grid=grid, seed=7)
        assert len(rows) == 10
        for row in rows:
            assert row.passes(budget=0.02), (row.freq_label, row.phi_label, row.gap)


class TestMartingaleTest:
    def test_constant_process_gives_zero(self):
        samples = np.ones((200, 6), dtype=complex)
        rep = martingale_test(samples)
        assert rep.max_abs_z == 0.0

    def test_positive_and_negative_controls(self):
        spec = builtin_scenarios()["decoupled_classical"].with_updates(dt=2e-3)
        grid = Grid1D(-7.0, 7.0, 281)
        tg = TimeGrid(1.0, 500)
        snaps = [0, 100, 200, 300, 400, 500]
        s = replica_pairing(spec, grid, [FrequencyChoice.constant(1.0, 1.0, "one")],
                            [tf.gaussian_bump()], 3000, n_particles=8, seed=8,
                            time_grid=tg, snap_indices=snaps)
        assert martingale_test(s.path_samples, s.snap_times).max_abs_z <= 3.0
        assert martingale_test(s.mass_path_samples.astype(complex),
                               s.snap_times).max_abs_z <= 3.0
        biased = s.mass_path_samples + 0.1 * s.snap_times[None, :]
        assert martingale_test(biased.astype(complex), s.snap_times).max_abs_z >= 5.0

    def test_requires_replicas(self):
        with pytest.raises(InvalidInputError):
            martingale_test(np.ones((10, 4), dtype=complex))


class TestOrthogonality:
    def test_invertible_k_gives_exact_zero(self):
        spec = builtin_scenarios()["decoupled_classical"].with_updates(dt=1e-2)
        fr = FrequencyChoice.constant(1.0, 1.0, "obs")
        res = orthogonality_test(spec, lambda t, x, y: spec.coeffs.eval_h2(t, x, y),
                                 fr, n_replicas=200, seed=9)
        assert res.estimate == 0j

    def test_zero_kappa_gives_exact_zero(self):
        spec = builtin_scenarios()["correlated_bounded"].with_updates(dt=1e-2)
        fr = FrequencyChoice.constant(np.array([1.0, -1.0]), 1.0, "obs")
        res = orthogonality_test(spec, lambda t, x, y: np.zeros((len(x), 3)),
                                 fr, n_replicas=200, seed=10)
        assert res.estimate == 0j

    def test_rank_deficient_k_statistic_within_three_se(self):
        spec = builtin_scenarios()["correlated_bounded"].with_updates(dt=2e-3)
        fr = FrequencyChoice.piecewise([[1.0, -1.0], [2.0, 0.0]], 1.0, "obs")
        res = orthogonality_test(spec, lambda t, x, y: spec.coeffs.eval_h2(t, x, y),
                                 fr, n_replicas=4000, seed=11)
        assert res.passed

    def test_frequency_dimension_checked(self):
        spec = builtin_scenarios()["correlated_bounded"]
        fr = FrequencyChoice.constant(np.zeros(3), 1.0, "wrong-dim")
        with pytest.raises(InvalidInputError):
            orthogonality_test(spec, lambda t, x, y: np.zeros((len(x), 3)), fr, 200)


class TestUniquenessProbe:
    def test_trivial_and_generic_entries_pass(self):
        spec = builtin_scenarios()["decoupled_classical"].with_updates(dt=2e-3)
        rows = uniqueness_probe(
            spec, [tf.constant_one(), tf.gaussian_bump()],
            [FrequencyChoice.constant(0.0, 1.0, "zero"),
             FrequencyChoice.constant(1.0, 1.0, "one")],
            n_replicas=800, grid=Grid1D(-6.5, 6.5, 261), n_particles=16, seed=12)
        assert len(rows) == 4
        for row in rows:
            assert row.passed, (row.freq_label, row.phi_label, row.diff, row.tolerance)
        trivial = rows[0]
        assert trivial.freq_label == "zero" and trivial.phi_label == "one"
        assert abs(trivial.particle_mean - 1.0) <= 0.05
        assert abs(trivial.grid_mean - 1.0) <= 0.05

    def test_degenerate_observation_matches_prior_both_solvers(self):
        spec = builtin_scenarios()["degenerate_k0"].with_updates(dt=2e-3)
        rows = uniqueness_probe(
            spec, [tf.gaussian_bump()], [FrequencyChoice.constant(0.0, 1.0, "zero")],
            n_replicas=600, grid=Grid1D(-6.0, 6.0, 161), n_particles=16, seed=13)
        row = rows[0]
        assert row.passed
        # both columns estimate the prior expectation of phi
        prior = simulate_joint(spec.with_updates(dt=2e-3), n_paths=4000, seed=14)
        mc = tf.gaussian_bump().value(prior.x_path[:, -1]).mean()
        assert abs(row.grid_mean.real - mc) <= 0.02
        assert abs(row.particle_mean.real - mc) <= 0.02
