"""Generator, noise operators, scenarios, and assumption checks."""

import numpy as np
import pytest
import sympy

from filterlab import testfunctions as tf
from filterlab.errors import InvalidInputError, ModelEvaluationError
from filterlab.model import (CoefficientSet, Dimensions, apply_generator,
                             apply_noise_operator, builtin_scenarios,
                             check_assumptions, noise_operator_matrix,
                             sampled_derivative_sup)

from util import scalar_scenario


class TestTestFunctions:
    def test_derivatives_match_finite_differences(self):
        pts = np.linspace(-3, 3, 25)[:, None]
        for phi in tf.standard_probe_set() + [tf.coordinate(), tf.coordinate_square(),
                                              tf.sin_wave(1.3), tf.constant_one()]:
            phi.check_derivatives(pts, tol=1e-5)

    def test_registry_lookup(self):
        assert tf.by_name("gauss_bump").name.startswith("gauss")
        with pytest.raises(KeyError):
            tf.by_name("nope")


class TestGenerator:
    def test_pure_drift_on_coordinate(self):
        # phi(x) = x, f = 3: hessian term vanishes, A phi = 3
        spec = scalar_scenario(f=3.0, g=0.7, g_bar=0.2)
        out = apply_generator(spec.coeffs, 0.0, np.array([[0.4]]), np.zeros(1),
                              tf.coordinate())
        assert out == pytest.approx(3.0, abs=1e-14)

    def test_pure_diffusion_on_square(self):
        # phi(x) = x^2, f = 0, g = 1, gbar = 0: A phi = 1/2 * 1 * 2 = 1
        spec = scalar_scenario(g=1.0)
        out = apply_generator(spec.coeffs, 0.0, np.array([[2.0]]), np.zeros(1),
                              tf.coordinate_square())
        assert out == pytest.approx(1.0, abs=1e-14)

    def test_against_symbolic_differentiation(self):
        # f(x) = x, g = 1, gbar = 1, phi = sin: A phi = x cos x - sin x
        spec = scalar_scenario(f=lambda x: x, g=1.0, g_bar=1.0)
        xs = sympy.Symbol("x")
        phi_s = sympy.sin(xs)
        a_phi = xs * phi_s.diff(xs) + sympy.Rational(1, 2) * 2 * phi_s.diff(xs, 2)
        expected = float(a_phi.subs(xs, 0.7))
        out = apply_generator(spec.coeffs, 0.0, np.array([[0.7]]), np.zeros(1),
                              tf.sin_wave(1.0))
        assert out == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.7 * np.cos(0.7) - np.sin(0.7))

    def test_linearity_in_phi(self):
        spec = builtin_scenarios()["correlated_bounded"]
        rng = np.random.default_rng(0)
        x = rng.normal(size=(40, 1))
        y = rng.normal(size=2)
        phi, psi = tf.gaussian_bump(), tf.sin_wave(1.2)
        alpha = 0.73

        combo = tf.TestFunction(
            name="combo",
            value=lambda z: alpha * phi.value(z) + psi.value(z),
            gradient=lambda z: alpha * phi.gradient(z) + psi.gradient(z),
            hessian=lambda z: alpha * phi.hessian(z) + psi.hessian(z),
        )
        lhs = apply_generator(spec.coeffs, 0.3, x, y, combo)
        rhs = alpha * apply_generator(spec.coeffs, 0.3, x, y, phi) \
            + apply_generator(spec.coeffs, 0.3, x, y, psi)
        assert np.allclose(lhs, rhs, atol=1e-13)

    def test_diffusion_matrix_psd(self):
        spec = builtin_scenarios()["correlated_bounded"]
        rng = np.random.default_rng(1)
        x = rng.normal(size=(60, 1))
        y = rng.normal(size=2)
        a = spec.coeffs.diffusion(0.2, x, y)
        assert np.allclose(a, np.swapaxes(a, 1, 2))
        assert np.all(np.linalg.eigvalsh(a) >= -1e-12)

    def test_non_finite_coefficient_raises(self):
        spec = scalar_scenario(f=lambda x: np.where(x > 0, np.inf, 0.0))
        with pytest.raises(ModelEvaluationError):
            apply_generator(spec.coeffs, 0.0, np.array([[1.0]]), np.zeros(1),
                            tf.coordinate())


class TestNoiseOperator:
    def test_degenerate_k_vanishes(self):
        spec = scalar_scenario(g_bar=1.0, h2=lambda x: np.sin(x), k=0.0)
        x = np.linspace(-2, 2, 9)[:, None]
        for phi in (tf.gaussian_bump(), tf.coordinate_square()):
            out = apply_noise_operator(spec.coeffs, 0, 0.0, x, np.zeros(1), phi)
            assert np.array_equal(out, np.zeros(9))

    def test_multiplication_operator(self):
        # gbar = 0, k = I, h2 = c: B^j phi = c_j phi
        dims = Dimensions(1, 2, 1, 2)
        c = np.array([0.3, -0.2])
        coeffs = CoefficientSet(
            dims=dims,
            f=lambda t, x, y: np.zeros((len(x), 1)),
            g=lambda t, x, y: np.ones((len(x), 1, 1)),
            g_bar=lambda t, x, y: np.zeros((len(x), 1, 2)),
            h1=lambda t, y: np.zeros((len(y), 2)),
            h2=lambda t, x, y: np.broadcast_to(c, (len(x), 2)),
            k=lambda t, y: np.eye(2),
        )
        x = np.linspace(-1, 1, 7)[:, None]
        phi = tf.gaussian_bump()
        for j in range(2):
            out = apply_noise_operator(coeffs, j, 0.0, x, np.zeros(2), phi)
            assert np.allclose(out, c[j] * phi.value(x), atol=1e-14)

    def test_hand_value(self):
        # gbar=1, k=1, h2(x)=x, phi=x^2 at x=2: grad phi * 1 + x phi = 4 + 8 = 12
        spec = scalar_scenario(g_bar=1.0, h2=lambda x: x, k=1.0)
        out = apply_noise_operator(spec.coeffs, 0, 0.0, np.array([[2.0]]),
                                   np.zeros(1), tf.coordinate_square())
        assert out == pytest.approx(12.0, abs=1e-12)

    def test_index_range(self):
        spec = scalar_scenario(k=1.0)
        with pytest.raises(InvalidInputError):
            apply_noise_operator(spec.coeffs, 1, 0.0, np.array([[0.0]]),
                                 np.zeros(1), tf.constant_one())

    def test_matrix_matches_componentwise(self):
        spec = builtin_scenarios()["correlated_bounded"]
        x = np.linspace(-1, 1, 5)[:, None]
        y = np.array([0.3, -0.2])
        phi = tf.tanh_ramp(1.0)
        mat = noise_operator_matrix(spec.coeffs, 0.1, x, y, phi)
        for j in range(3):
            assert np.allclose(mat[:, j],
                               apply_noise_operator(spec.coeffs, j, 0.1, x, y, phi))


class TestScenarios:
    def test_lookup(self):
        scen = builtin_scenarios()
        assert scen.get("unknown") is None
        assert scen["degenerate_k0"].coeffs.eval_k(0.0, np.zeros((1, 1))).max() == 0.0

    def test_composite_h_is_derived(self):
        spec = builtin_scenarios()["linear_gaussian"]
        x = np.array([[0.5]])
        y = np.zeros((1, 1))
        h = spec.coeffs.eval_h(0.0, x, y)
        p = spec.meta
        expected = p["h1"] + p["k"] * (p["H"] * 0.5 + p["h20"])
        assert h[0, 0] == pytest.approx(expected)

    def test_correlated_bounded_k_is_rank_deficient(self):
        spec = builtin_scenarios()["correlated_bounded"]
        k = spec.coeffs.eval_k(0.0, np.zeros((1, 2)))[0]
        assert k.shape == (2, 3)
        assert np.linalg.matrix_rank(k) == 1

    def test_decoupled_is_y_free_and_elliptic(self):
        spec = builtin_scenarios()["decoupled_classical"]
        assert spec.coeffs.y_free
        x = np.linspace(-5, 5, 11)[:, None]
        a = spec.coeffs.diffusion(0.0, x, np.zeros(1))[:, 0, 0]
        assert np.all(a >= 1.0)

    def test_dt_must_divide_horizon(self):
        with pytest.raises(InvalidInputError):
            scalar_scenario(dt=0.3, horizon=1.0)


class TestAssumptionChecks:
    def test_linear_gaussian_flags_unbounded_drift(self):
        spec = builtin_scenarios()["linear_gaussian"]
        report = check_assumptions(spec, n_samples=128)
        assert report.growth_ok                        # affine growth is linear
        assert report.flags["f_unbounded"]             # but not bounded
        assert report.flags["h2_unbounded"]

    def test_bounded_scenario_passes(self):
        spec = builtin_scenarios()["correlated_bounded"]
        report = check_assumptions(spec, n_samples=128)
        assert report.bounded_ok and report.growth_ok
        assert not report.flags["derivative_bound_exceeded"]

    def test_quadratic_drift_flagged_superlinear(self):
        spec = scalar_scenario(f=lambda x: x**2, g=1.0)
        report = check_assumptions(spec, n_samples=128)
        assert report.flags["f_superlinear"]

    def test_derivative_sup_below_declared_bound(self):
        spec = builtin_scenarios()["correlated_bounded"]
        sup = sampled_derivative_sup(spec, n_samples=128)
        assert np.isfinite(sup)
        assert sup < spec.declared_bound
