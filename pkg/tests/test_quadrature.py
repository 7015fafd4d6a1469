"""Tests for Gauss-Legendre rules and piecewise integration."""

import unittest
import os
import sys

import numpy as np
from numpy.testing import assert_allclose

# Add project root to path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.errors import ConfigurationError, IntegrationError
from src.quadrature import gauss_legendre, integrate_piecewise, segment_bounds


class TestGaussLegendre(unittest.TestCase):
    """Test the node/weight tables."""

    def test_weights_sum_to_interval_length(self):
        for n in (1, 2, 5, 10, 64):
            self.assertAlmostEqual(gauss_legendre(n).weights.sum(), 2.0, places=12)

    def test_exact_for_degree_2n_minus_1(self):
        for n in (1, 3, 10):
            rule = gauss_legendre(n)
            degree = 2 * n - 1
            nodes, weights = rule.mapped(0.0, 2.0)
            numeric = np.sum(weights * (nodes ** degree + nodes ** (degree - 1 if degree > 0 else 0)))
            exact = 2.0 ** (degree + 1) / (degree + 1) + (2.0 ** degree / degree if degree > 0 else 2.0)
            self.assertAlmostEqual(numeric / exact, 1.0, places=12)

    def test_cached_and_read_only(self):
        rule = gauss_legendre(10)
        self.assertIs(rule, gauss_legendre(10))
        with self.assertRaises(ValueError):
            rule.nodes[0] = 0.0

    def test_unsupported_sizes(self):
        for n in (0, 65, -3):
            with self.assertRaises(ConfigurationError):
                gauss_legendre(n)

    def test_mapped_many_intervals(self):
        nodes, weights = gauss_legendre(4).mapped(np.array([0.0, 1.0]), np.array([1.0, 3.0]))
        self.assertEqual(nodes.shape, (2, 4))
        assert_allclose(weights.sum(axis=1), [1.0, 2.0])


class TestIntegratePiecewise(unittest.TestCase):
    """Test integration split at breakpoints."""

    def setUp(self):
        self.rule = gauss_legendre(10)

    def test_exponential(self):
        value = integrate_piecewise(np.exp, [0.0, 1.0, 2.0, 3.0], self.rule, 0.0, 3.0)
        self.assertAlmostEqual(value, np.expm1(3.0), places=12)

    def test_partial_range(self):
        value = integrate_piecewise(np.exp, [0.0, 1.0, 2.0, 3.0], self.rule, 0.5, 2.5)
        self.assertAlmostEqual(value, np.exp(2.5) - np.exp(0.5), places=12)

    def test_kink_at_breakpoint_is_exact(self):
        value = integrate_piecewise(lambda s: np.abs(s - 1.0), [1.0], gauss_legendre(1), 0.0, 3.0)
        self.assertAlmostEqual(value, 0.5 + 2.0, places=14)

    def test_matrix_valued(self):
        def outer(s):
            v = np.stack([np.ones_like(s), s], axis=1)
            return v[:, :, None] * v[:, None, :]

        value = integrate_piecewise(outer, [], self.rule, 0.0, 1.0)
        assert_allclose(value, [[1.0, 0.5], [0.5, 1.0 / 3.0]], atol=1e-14)

    def test_empty_range(self):
        self.assertEqual(integrate_piecewise(np.exp, [0.0, 1.0], self.rule, 0.4, 0.4), 0.0)
        zeros = integrate_piecewise(lambda s: np.ones((s.size, 2)), [], self.rule, 1.0, 1.0)
        assert_allclose(zeros, [0.0, 0.0])

    def test_reversed_limits(self):
        with self.assertRaises(ConfigurationError):
            integrate_piecewise(np.exp, [], self.rule, 1.0, 0.0)

    def test_unsorted_breakpoints(self):
        with self.assertRaises(ConfigurationError):
            integrate_piecewise(np.exp, [2.0, 1.0], self.rule, 0.0, 3.0)

    def test_nan_integrand(self):
        with self.assertRaises(IntegrationError):
            integrate_piecewise(lambda s: np.full_like(s, np.nan), [], self.rule, 0.0, 1.0)

    def test_segment_bounds(self):
        assert_allclose(segment_bounds([0.0, 1.0, 2.0, 3.0], 0.5, 2.0), [0.5, 1.0, 2.0])


if __name__ == '__main__':
    unittest.main()
