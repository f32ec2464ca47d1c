"""levyid - Lévy SDE drift identification : Test the trust-region solver."""

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

import levyid.optimizer as optimizer  # noqa


def quadratic(x):
    """Convex quadratic with minimum at (1, -2)."""
    a = np.array([[3.0, 1.0], [1.0, 2.0]])
    d = x - np.array([1.0, -2.0])
    return 0.5 * float(d @ a @ d), a @ d


def rosenbrock(x):
    """Rosenbrock function and gradient."""
    f = (1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2
    grad = np.array(
        [
            -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] ** 2),
            200.0 * (x[1] - x[0] ** 2),
        ]
    )
    return f, grad


class LevyIdOptimizerTest(unittest.TestCase):
    """Test class for the SR1 trust-region minimizer."""

    def setUp(self):
        """Prepare for test."""
        logging.disable(logging.CRITICAL)  # disable most logging during test

    def tearDown(self):
        """Restore logging."""
        logging.disable(logging.NOTSET)

    def test_steihaug_interior_newton_step(self):
        """Test a wide radius gives the Newton step."""
        grad = np.array([1.0, -1.0])
        step, on_boundary = optimizer.steihaug_cg(grad, 2.0 * np.eye(2), 10.0)
        np.testing.assert_allclose(step, -0.5 * grad)
        self.assertFalse(on_boundary)

    def test_steihaug_boundary(self):
        """Test a small radius or negative curvature stops on the edge."""
        grad = np.array([1.0, -1.0])
        step, on_boundary = optimizer.steihaug_cg(grad, np.eye(2), 0.1)
        self.assertTrue(on_boundary)
        self.assertAlmostEqual(float(np.linalg.norm(step)), 0.1)

        step, on_boundary = optimizer.steihaug_cg(grad, -np.eye(2), 2.0)
        self.assertTrue(on_boundary)
        self.assertAlmostEqual(float(np.linalg.norm(step)), 2.0)
        self.assertLess(float(grad @ step), 0.0)

    def test_steihaug_zero_gradient(self):
        """Test a stationary point gives no step."""
        step, on_boundary = optimizer.steihaug_cg(np.zeros(3), np.eye(3), 1.0)
        np.testing.assert_array_equal(step, np.zeros(3))
        self.assertFalse(on_boundary)

    def test_sr1_secant(self):
        """Test the SR1 update satisfies B s = y."""
        hess = np.eye(2)
        s = np.array([0.3, -0.1])
        y = np.array([1.0, 0.2])
        updated = optimizer.sr1_update(hess, s, y, 1e-8)
        np.testing.assert_allclose(updated @ s, y)
        np.testing.assert_allclose(updated, updated.T)
        self.assertIsNone(optimizer.sr1_update(hess, s, s, 1e-8))

    def test_bfgs_secant(self):
        """Test BFGS satisfies B s = y and needs positive curvature."""
        hess = np.eye(2)
        s = np.array([0.3, -0.1])
        y = np.array([1.0, 0.2])
        updated = optimizer.bfgs_update(hess, s, y)
        np.testing.assert_allclose(updated @ s, y)
        self.assertTrue(np.all(np.linalg.eigvalsh(updated) > 0.0))
        self.assertIsNone(optimizer.bfgs_update(hess, s, -y))

    def test_lbfgs_hessian(self):
        """Test the limited-memory matrix matches the newest pair."""
        rng = np.random.default_rng(0)
        root = rng.normal(size=(3, 3))
        curvature = root @ root.T + 3.0 * np.eye(3)
        pairs = [(s, curvature @ s) for s in rng.normal(size=(4, 3))]
        hess = optimizer.lbfgs_hessian(pairs, 3)
        s, y = pairs[-1]
        np.testing.assert_allclose(hess @ s, y, rtol=1e-10)
        np.testing.assert_allclose(hess, hess.T, atol=1e-10)
        self.assertTrue(np.all(np.linalg.eigvalsh(hess) > 0.0))
        self.assertIsNone(optimizer.lbfgs_hessian([], 3))

    def test_quadratic_converges(self):
        """Test a convex quadratic stops on the gradient tolerance."""
        result = optimizer.minimize_trust_region(quadratic, np.zeros(2))
        self.assertEqual(result.status, 1)
        self.assertEqual(result.message, optimizer.STATUS[1])
        np.testing.assert_allclose(result.x, [1.0, -2.0], atol=1e-8)
        self.assertEqual(len(result.history), result.iterations + 1)
        self.assertEqual(result.history[0].iteration, 0)
        self.assertIn(
            result.history[-1].update, ("sr1", "lbfgs", "none", "-")
        )

    def test_rosenbrock(self):
        """Test the Rosenbrock valley is followed to (1, 1)."""
        options = optimizer.TrustRegionOptions(
            gtol=1e-8, xtol=1e-14, max_iter=500
        )
        result = optimizer.minimize_trust_region(
            rosenbrock, np.array([-1.2, 1.0]), options
        )
        self.assertIn(result.status, (1, 2))
        np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-4)
        losses = [record.loss for record in result.history]
        self.assertEqual(losses, sorted(losses, reverse=True))

    def test_non_finite_start(self):
        """Test a NaN objective at x0 stops at once."""

        def broken(x):
            return float("nan"), np.zeros_like(x)

        result = optimizer.minimize_trust_region(broken, np.ones(2))
        self.assertEqual(result.status, 4)
        self.assertEqual(result.iterations, 0)
        self.assertEqual(result.evaluations, 1)

    def test_patience_warning(self):
        """Test a stalled loss warns once and runs out of iterations."""

        def flat(x):
            return 0.0, np.ones_like(x)

        options = optimizer.TrustRegionOptions(max_iter=5, patience=3)
        result = optimizer.minimize_trust_region(flat, np.zeros(2), options)
        self.assertEqual(result.status, 3)
        self.assertEqual(len(result.warnings), 1)
        self.assertIn("3 iterations", result.warnings[0])
        self.assertFalse(any(r.accepted for r in result.history[1:]))

    def test_options_validation(self):
        """Test non-positive tolerances are rejected."""
        with self.assertRaises(ValueError):
            optimizer.TrustRegionOptions(gtol=0.0)
        with self.assertRaises(ValueError):
            optimizer.TrustRegionOptions(max_iter=0)
        with self.assertRaises(ValueError):
            optimizer.TrustRegionOptions(memory=0)


if __name__ == "__main__":
    unittest.main(buffer=True)
