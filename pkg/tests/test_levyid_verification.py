"""levyid - Lévy SDE drift identification : Test the verification oracles."""

import inspect
import logging
import os
import sys
import unittest

current_dir = os.path.dirname(
    os.path.abspath(inspect.getfile(inspect.currentframe()))
)
parent_dir = os.path.dirname(current_dir)
sys.path.insert(0, parent_dir)

import levyid.verification as verification  # noqa


class LevyIdVerificationTest(unittest.TestCase):
    """Test class for the oracle suite."""

    def setUp(self):
        """Prepare for test."""
        logging.disable(logging.CRITICAL)  # disable most logging during test

    def tearDown(self):
        """Restore logging."""
        logging.disable(logging.NOTSET)

    def test_fast_oracles_pass(self):
        """Test every fast oracle passes."""
        results = verification.run_oracles()
        fast = [
            name
            for name, (_, slow) in verification.ORACLES.items()
            if not slow
        ]
        self.assertEqual([r.name for r in results], fast)
        for result in results:
            with self.subTest(oracle=result.name):
                self.assertTrue(result.passed, result.line())

    def test_named_selection(self):
        """Test names select oracles in the given order."""
        results = verification.run_oracles(["stability", "sine_kernel"])
        self.assertEqual(
            [r.name for r in results], ["stability", "sine_kernel"]
        )
        with self.assertRaises(KeyError):
            verification.run_oracles(["stability", "bogus"])

    def test_random_instances(self):
        """Test instances alternate dimension and fit their grid."""
        for seed in range(4):
            model, dataset, cfg = verification.random_instance(seed)
            self.assertEqual(model.dim, 1 + seed % 2)
            self.assertEqual(dataset.dim, cfg.grid.dim)
            cfg.grid.check_modes(model.J, model.L)
        _, _, cfg = verification.random_instance(0)
        self.assertEqual(cfg.mode, "per_trajectory")

    def test_result_line(self):
        """Test the one-line summary."""
        result = verification.OracleResult("demo", False, 0.5, 0.1, "x")
        line = result.line()
        self.assertTrue(line.startswith("FAIL  demo"))
        self.assertIn("5.000e-01", line)

    @unittest.skipUnless(
        os.environ.get("LEVYID_SLOW"), "set LEVYID_SLOW to run"
    )
    def test_ou_monte_carlo(self):
        """Test simulated OU paths against the exact scheme CF."""
        result = verification.ou_monte_carlo()
        self.assertTrue(result.passed, result.line())


if __name__ == "__main__":
    unittest.main(buffer=True)
