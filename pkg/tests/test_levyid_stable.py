"""levyid - Lévy SDE drift identification : Test stable noise."""

import inspect
import logging
import os
import sys
import unittest

import numpy as np

current_dir = os.path.dirname(
    os.path.abspath(inspect.getfile(inspect.currentframe()))
)
parent_dir = os.path.dirname(current_dir)
sys.path.insert(0, parent_dir)

import levyid.stable as stable  # noqa


class LevyIdStableTest(unittest.TestCase):
    """Test class for stable increments."""

    def setUp(self):
        """Prepare for test."""
        logging.disable(logging.CRITICAL)  # disable most logging during test
        self.s = np.linspace(-4.0, 4.0, 41)

    def tearDown(self):
        """Restore logging."""
        logging.disable(logging.NOTSET)

    def test_increment_cf_values(self):
        """Test the closed-form CF."""
        self.assertEqual(stable.increment_cf([0.0], 1.0, 0.01), 1.0)
        self.assertAlmostEqual(
            float(stable.increment_cf([1.0], 1.0, 1.0)), np.exp(-1.0)
        )
        self.assertAlmostEqual(
            float(stable.increment_cf([2.0], 2.0, 0.5)), np.exp(-2.0)
        )

    def test_increment_cf_product_over_axes(self):
        """Test a vector frequency multiplies the per-axis factors."""
        value = stable.increment_cf([1.0, 2.0], 1.5, 0.3)
        expected = np.exp(-0.3 * (1.0 + 2.0**1.5))
        self.assertAlmostEqual(float(value), expected)

    def test_scaled_increment_cf(self):
        """Test diagonal scaling enters as |g s|."""
        value = stable.scaled_increment_cf([2.0], 1.0, 0.5, 0.25)
        self.assertAlmostEqual(float(value), np.exp(-0.25))

    def test_sampler_matches_cf(self):
        """Test the empirical CF of 1e5 samples is within 0.02."""
        for index, alpha in enumerate((1.0, 1.5, 2.0)):
            for h in (0.01, 1.0):
                x = stable.sample_increments(alpha, h, 100000, 1, index)
                ecf = np.exp(1j * np.outer(x[:, 0], self.s)).mean(axis=0)
                exact = stable.increment_cf(self.s[:, None], alpha, h)
                self.assertLess(np.max(np.abs(ecf - exact)), 0.02)

    def test_cauchy_scale(self):
        """Test the alpha = 1 sample median absolute value is h."""
        x = stable.sample_increments(1.0, 1.0, 100000, 1, 5)
        self.assertAlmostEqual(float(np.median(np.abs(x))), 1.0, delta=0.03)

    def test_reproducible(self):
        """Test a fixed seed gives identical samples."""
        a = stable.sample_increments(1.5, 0.1, 1000, 2, 42)
        b = stable.sample_increments(1.5, 0.1, 1000, 2, 42)
        np.testing.assert_array_equal(a, b)
        self.assertEqual(a.shape, (1000, 2))

    def test_streams_independent(self):
        """Test different stream indices differ."""
        a = stable.stream(1, 0).standard_normal(5)
        b = stable.stream(1, 1).standard_normal(5)
        self.assertFalse(np.allclose(a, b))

    def test_domain_errors(self):
        """Test alpha and h outside their ranges are rejected."""
        with self.assertRaises(stable.DomainError):
            stable.sample_increments(0.5, 0.1, 10, 1, 0)
        with self.assertRaises(stable.DomainError):
            stable.sample_increments(2.5, 0.1, 10, 1, 0)
        with self.assertRaises(stable.DomainError):
            stable.sample_increments(1.0, 0.0, 10, 1, 0)
        with self.assertRaises(ValueError):
            stable.increment_cf([1.0], 1.0, -1.0)

    def test_spec_scale(self):
        """Test the step scale is h^(1/alpha)."""
        spec = stable.StableSpec.for_step(2.0, 0.25)
        self.assertAlmostEqual(spec.scale, 0.5)
        self.assertAlmostEqual(
            float(spec.cf(np.array([1.0]))), np.exp(-0.25)
        )


if __name__ == "__main__":
    unittest.main(buffer=True)
