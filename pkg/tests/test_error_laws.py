"""Tests for the six error distributions."""

import unittest
import os
import sys

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate, stats

# Add project root to path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.error_laws import DISTRIBUTION_KEYS, EULER_GAMMA, ErrorDistribution
from src.errors import UnknownDistributionError


class TestCatalogue(unittest.TestCase):
    """Test construction and lookup."""

    def test_keys(self):
        self.assertEqual(ErrorDistribution.from_key('a').kind, 'std_normal')
        self.assertEqual(ErrorDistribution.from_key('gumbel_half').key, 'e')
        self.assertEqual(len(DISTRIBUTION_KEYS), 6)

    def test_unknown(self):
        with self.assertRaises(UnknownDistributionError):
            ErrorDistribution('cauchy')
        with self.assertRaises(UnknownDistributionError):
            ErrorDistribution.from_key('z')

    def test_moments(self):
        expected = {
            'a': (0.0, 1.0),
            'b': (-EULER_GAMMA, np.pi ** 2 / 6),
            'c': (0.0, 5.0),
            'd': (0.0, 0.95 + 0.05 * 9.0),
            'e': (0.0, 0.25 * np.pi ** 2 / 6),
            'f': (-0.5, 0.5 * 1.0 + 0.5 * (0.25 + 1.0) - 0.25),
        }
        for key, (mean, var) in expected.items():
            law = ErrorDistribution.from_key(key)
            self.assertAlmostEqual(law.mean(), mean, places=12, msg=key)
            self.assertAlmostEqual(law.var(), var, places=12, msg=key)


class TestDensities(unittest.TestCase):
    """Test density, survival and hazard of every law."""

    def test_density_integrates_to_one(self):
        for key in DISTRIBUTION_KEYS:
            law = ErrorDistribution.from_key(key)
            total, _ = integrate.quad(lambda t: law.pdf(t)[0], -np.inf, np.inf)
            self.assertAlmostEqual(total, 1.0, places=7, msg=key)

    def test_hazard_identities(self):
        t = np.linspace(-3.0, 3.0, 13)
        for key in DISTRIBUTION_KEYS:
            law = ErrorDistribution.from_key(key)
            assert_allclose(law.cdf(t) + law.sf(t), 1.0, atol=1e-12)
            assert_allclose(law.hazard(t), law.pdf(t) / law.sf(t), rtol=1e-10)

    def test_dlog_hazard_matches_finite_differences(self):
        t = np.linspace(-2.5, 2.5, 11)
        h = 1e-5
        for key in DISTRIBUTION_KEYS:
            law = ErrorDistribution.from_key(key)
            numeric = (law.log_hazard(t + h) - law.log_hazard(t - h)) / (2 * h)
            assert_allclose(law.dlog_hazard(t), numeric, rtol=1e-6, atol=1e-8, err_msg=key)

    def test_extreme_value_log_hazard_is_identity(self):
        law = ErrorDistribution.from_key('b')
        t = np.linspace(-5.0, 2.0, 8)
        assert_allclose(law.log_hazard(t), t, atol=1e-10)
        assert_allclose(law.dlog_hazard(t), 1.0, atol=1e-10)

    def test_normal_matches_scipy(self):
        law = ErrorDistribution.from_key('a')
        t = np.array([-1.0, 0.0, 2.0])
        assert_allclose(law.pdf(t), stats.norm.pdf(t))
        assert_allclose(law.sf(t), stats.norm.sf(t))

    def test_far_tail_stays_finite(self):
        for key in DISTRIBUTION_KEYS:
            law = ErrorDistribution.from_key(key)
            self.assertTrue(np.all(np.isfinite(law.dlog_hazard([-30.0, 8.0]))), key)

    def test_quantiles(self):
        law = ErrorDistribution.from_key('a')
        self.assertAlmostEqual(law.survival_quantile(1e-6), stats.norm.isf(1e-6), places=9)
        self.assertAlmostEqual(law.lower_quantile(1e-10), stats.norm.ppf(1e-10), places=9)
        ev = ErrorDistribution.from_key('b')
        self.assertAlmostEqual(ev.lower_quantile(1e-10), np.log(-np.log1p(-1e-10)), places=8)


class TestSampling(unittest.TestCase):
    """Test random draws."""

    def test_reproducible(self):
        law = ErrorDistribution.from_key('c')
        first = law.sample(np.random.default_rng(42), 100)
        second = law.sample(np.random.default_rng(42), 100)
        assert_array_equal(first, second)

    def test_sample_moments(self):
        rng = np.random.default_rng(2024)
        n = 200_000
        for key in DISTRIBUTION_KEYS:
            law = ErrorDistribution.from_key(key)
            draws = law.sample(rng, n)
            self.assertLess(abs(draws.mean() - law.mean()), 5 * np.sqrt(law.var() / n), key)
            self.assertLess(abs(draws.var() / law.var() - 1.0), 0.05, key)


if __name__ == '__main__':
    unittest.main()
