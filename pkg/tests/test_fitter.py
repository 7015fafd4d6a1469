"""Tests for starting values and the Newton-Raphson fit."""

import unittest
import os
import sys

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from scipy import optimize

# Add project root to path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.config import FitConfig
from src.errors import NumericalError
from src.fitter import fit, hazard_curve, initial_estimate, make_basis, newton_direction, ols_start
from src.model_likelihood import Dataset, SieveModel, log_likelihood, score
from src.quadrature import gauss_legendre


def simulated(n=300, seed=11, censor_high=6.0):
    rng = np.random.default_rng(seed)
    x = np.column_stack([(rng.random(n) < 0.5).astype(float), rng.normal(0.0, 0.5, n)])
    e = rng.normal(size=n)
    t = 2.0 + x @ np.array([1.0, 1.0]) + e
    c = np.log(rng.uniform(0.0, np.exp(censor_high), n))
    return Dataset(np.minimum(t, c), (t <= c).astype(int), x)


def uncensored_extreme_value(n, seed):
    rng = np.random.default_rng(seed)
    x = np.column_stack([(rng.random(n) < 0.5).astype(float), rng.normal(0.0, 0.5, n)])
    e = np.log(rng.exponential(size=n))
    return Dataset(2.0 + x @ np.array([1.0, 1.0]) + e, np.ones(n, dtype=int), x)


class TestStartingValues(unittest.TestCase):
    """Test OLS start and the exponential log-hazard start."""

    def test_ols_recovers_exact_line(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(20, 2))
        data = Dataset(0.5 + x @ np.array([1.0, -2.0]), np.ones(20, dtype=int), x)
        assert_allclose(ols_start(data), [1.0, -2.0], atol=1e-12)

    def test_ols_uses_events_only(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0.0, 1.0, 2.0, 100.0])
        data = Dataset(y, [1, 1, 1, 0], x)
        assert_allclose(ols_start(data), [1.0], atol=1e-12)

    def test_rank_deficient_falls_back_to_zero(self):
        x = np.array([[1.0], [1.0], [1.0]])
        data = Dataset([1.0, 2.0, 3.0], [1, 1, 1], x)
        with self.assertLogs('src.fitter', level='WARNING'):
            beta = ols_start(data)
        assert_array_equal(beta, [0.0])

    def test_exponential_log_hazard(self):
        data = simulated(n=50)
        beta0, gamma0 = initial_estimate(data, q=5, lower=-1.0)
        eps = data.residuals(beta0)
        expected = np.log(data.n_events / np.clip(eps + 1.0, 0, None).sum())
        assert_allclose(gamma0, np.full(5, expected))

    def test_no_exposure(self):
        data = Dataset([0.0, 1.0], [1, 1], [[0.0], [0.0]])
        with self.assertRaises(NumericalError):
            initial_estimate(data, q=4, lower=10.0)


class TestNewtonDirection(unittest.TestCase):
    """Test the ridge-stabilized Newton system."""

    def test_negative_definite(self):
        hess = -np.array([[2.0, 0.5], [0.5, 1.0]])
        grad = np.array([1.0, -1.0])
        assert_allclose(newton_direction(hess, grad, 1e-8), np.linalg.solve(-hess, grad))

    def test_indefinite_gives_ascent_direction(self):
        hess = np.diag([-1.0, 0.5])
        grad = np.array([1.0, 1.0])
        step = newton_direction(hess, grad, 1e-8)
        self.assertGreater(step @ grad, 0.0)


class TestFit(unittest.TestCase):
    """Test the full fit."""

    @classmethod
    def setUpClass(cls):
        cls.data = simulated()
        cls.result = fit(cls.data)

    def test_converges_near_truth(self):
        self.assertTrue(self.result.converged)
        self.assertLessEqual(self.result.grad_norm, 1e-5)
        assert_allclose(self.result.beta, [1.0, 1.0], atol=0.4)

    def test_ascent_path(self):
        path = np.array(self.result.loglik_path)
        self.assertTrue(np.all(np.diff(path) >= 0))
        self.assertEqual(path[-1], self.result.loglik)

    def test_result_shapes(self):
        self.assertEqual(self.result.gamma.size, self.result.basis.q)
        self.assertEqual(self.result.hessian_at_opt.shape, (2 + 5, 2 + 5))
        self.assertEqual(self.result.n_obs, 300)
        self.assertIn('converged', self.result.diagnostics())

    def test_permutation_invariance(self):
        perm = np.random.default_rng(5).permutation(self.data.n)
        shuffled = fit(self.data.take(perm))
        assert_array_equal(shuffled.beta, self.result.beta)
        assert_array_equal(shuffled.gamma, self.result.gamma)

    def test_translation_invariance(self):
        shifted = Dataset(self.data.y + 5.0, self.data.delta, self.data.x)
        moved = fit(shifted)
        assert_allclose(moved.beta, self.result.beta, atol=1e-6)
        self.assertAlmostEqual(moved.basis.lower, self.result.basis.lower + 5.0, places=8)
        grid = np.linspace(self.result.basis.lower, self.result.basis.upper, 25)
        assert_allclose(moved.model.log_hazard.values(grid + 5.0), self.result.model.log_hazard.values(grid),
                        atol=1e-6)

    def test_hazard_curve(self):
        grid, log_hazard, hazard = hazard_curve(self.result)
        self.assertEqual(grid.size, 200)
        self.assertEqual(grid[0], self.result.basis.lower)
        self.assertAlmostEqual(grid[-1], self.result.basis.upper, places=12)
        assert_allclose(hazard, np.exp(log_hazard))

    def test_iteration_cap_reports_non_convergence(self):
        with self.assertLogs('src.fitter', level='WARNING'):
            capped = fit(self.data, FitConfig(max_iter=1))
        self.assertFalse(capped.converged)
        self.assertEqual(capped.n_iter, 1)


class TestFitAgainstBruteForce(unittest.TestCase):
    """Newton-Raphson must reach at least the likelihood a derivative-free search finds."""

    def test_small_sample(self):
        rng = np.random.default_rng(21)
        n = 12
        x = rng.normal(0.0, 0.5, (n, 1))
        t = x[:, 0] + rng.normal(size=n)
        c = rng.uniform(0.0, 3.0, n)
        data = Dataset(np.minimum(t, c), (t <= c).astype(int), x)
        config = FitConfig(n_interior_knots=1)
        basis = make_basis(data.canonical(), ols_start(data), config)
        result = fit(data, config, seed_basis=basis)
        quad = gauss_legendre(config.quad_points)

        def negative(theta):
            try:
                return -log_likelihood(data, SieveModel.from_theta(theta, 1, basis), quad)
            except (ArithmeticError, ValueError):
                return np.inf

        start = np.concatenate(initial_estimate(data, basis.q, basis.lower))
        search = optimize.minimize(negative, start, method='Nelder-Mead',
                                   options={'maxiter': 40000, 'maxfev': 40000, 'xatol': 1e-10, 'fatol': 1e-12})
        self.assertTrue(result.converged)
        self.assertGreaterEqual(result.loglik, -search.fun - 1e-8)


class TestBoundedCoefficients(unittest.TestCase):
    """Coefficients pushed past gamma_bound are held there and the fit stops at a KKT point."""

    @classmethod
    def setUpClass(cls):
        cls.data = uncensored_extreme_value(300, seed=2)
        cls.config = FitConfig(gamma_bound=1.0)
        cls.result = fit(cls.data, cls.config)

    def test_converges_with_active_bounds(self):
        self.assertTrue(self.result.converged)
        self.assertIn(0, self.result.active_bounds)
        active = list(self.result.active_bounds)
        assert_array_equal(np.abs(self.result.gamma[active]), 1.0)
        self.assertEqual(self.result.diagnostics()['active_bounds'], active)

    def test_kkt_conditions(self):
        active = np.array(self.result.active_bounds)
        full = score(self.data.canonical(), self.result.model, gauss_legendre(self.config.quad_points))
        outward = np.sign(self.result.gamma[active]) * full[2 + active]
        self.assertTrue(np.all(outward > 0))
        self.assertLessEqual(np.max(np.abs(np.delete(full, 2 + active))), 1e-5)
        self.assertLessEqual(self.result.grad_norm, 1e-5)

    def test_free_hessian(self):
        q_free = self.result.basis.q - len(self.result.active_bounds)
        self.assertEqual(self.result.free_hessian.shape, (2 + q_free, 2 + q_free))

    def test_held_coefficients_are_logged(self):
        with self.assertLogs('src.fitter', level='WARNING') as logs:
            fit(self.data, self.config)
        self.assertTrue(any('held at the' in line for line in logs.output))

    def test_loose_bound_leaves_nothing_active(self):
        result = fit(simulated())
        self.assertEqual(result.active_bounds, ())
        assert_array_equal(result.free_hessian, result.hessian_at_opt)


class TestExtremeValueErrors(unittest.TestCase):
    """Under extreme-value errors the residual log-hazard is exactly t - 2, a line in every sieve."""

    @classmethod
    def setUpClass(cls):
        cls.fits = [(data, fit(data, FitConfig(n_interior_knots=2)))
                    for data in (uncensored_extreme_value(600, seed) for seed in range(20))]

    def test_fits_converge(self):
        self.assertGreaterEqual(sum(result.converged for _, result in self.fits), 19)

    def test_sup_error_where_events_are(self):
        sups = []
        for data, result in self.fits:
            if not result.converged:
                continue
            lo, hi = np.quantile(data.residuals(result.beta), [0.05, 0.95])
            grid = np.linspace(lo, hi, 200)
            sups.append(np.max(np.abs(result.model.log_hazard.values(grid) - (grid - 2.0))))
        self.assertLessEqual(np.mean(sups), 0.5)


if __name__ == '__main__':
    unittest.main()
