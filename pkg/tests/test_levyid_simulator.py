"""levyid - Lévy SDE drift identification : Test the simulator."""

import inspect
import logging
import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

current_dir = os.path.dirname(
    os.path.abspath(inspect.getfile(inspect.currentframe()))
)
parent_dir = os.path.dirname(current_dir)
sys.path.insert(0, parent_dir)

import levyid.simulator as simulator  # noqa
from levyid.drift import sine_embedding  # noqa
from levyid.verification import ou_weak_order  # noqa


class LevyIdSimulatorTest(unittest.TestCase):
    """Test class for trajectory simulation and dataset files."""

    def setUp(self):
        """Prepare for test."""
        logging.disable(logging.CRITICAL)  # disable most logging during test
        self.tmp = tempfile.TemporaryDirectory()
        self.sine = simulator.DriftSpec("sine1d")

    def tearDown(self):
        """Clean up after test."""
        self.tmp.cleanup()
        logging.disable(logging.NOTSET)

    def generate(self, **kwargs):
        """Small sine dataset with overridable arguments."""
        arguments = dict(
            drift=self.sine,
            g=(0.25,),
            alpha=1.0,
            init=simulator.PointInit((0.0,)),
            fine_step=1e-3,
            total_steps=200,
            save_stride=50,
            n_trajectories=6,
            seed=1,
        )
        arguments.update(kwargs)
        return simulator.generate_dataset(**arguments)

    def test_step_examples(self):
        """Test single Euler-Maruyama steps."""
        x = simulator.euler_maruyama_step(
            np.array([0.0]), self.sine, np.array([1.0]), 1.0, 0.1, np.zeros(1)
        )
        np.testing.assert_array_equal(x, [0.0])

        x = simulator.euler_maruyama_step(
            np.array([np.pi / 2.0]),
            self.sine,
            np.array([1.0]),
            1.0,
            0.1,
            np.zeros(1),
        )
        np.testing.assert_allclose(x, [np.pi / 2.0 + 0.1])

        x = simulator.euler_maruyama_step(
            np.array([2.0]),
            simulator.DriftSpec("doublewell1d"),
            np.array([1.0]),
            1.0,
            0.1,
            np.zeros(1),
        )
        np.testing.assert_allclose(x, [1.4])

        x = simulator.euler_maruyama_step(
            np.array([0.0]), self.sine, np.array([0.5]), 1.0, 0.1, np.ones(1)
        )
        np.testing.assert_allclose(x, [0.5])

    def test_builtin_fields(self):
        """Test a few values of the ground-truth fields."""
        x = np.array([[1.0, 0.5]])
        np.testing.assert_allclose(
            simulator.DriftSpec("maier_stein")(x), [[-0.25, -1.0]]
        )
        np.testing.assert_allclose(
            simulator.DriftSpec("trig_singlewell2d")(x),
            [[np.sin(0.5), -np.sin(1.0)]],
        )
        np.testing.assert_allclose(simulator.DriftSpec("ou")([[2.0]]), [[-2]])

    def test_fourier_drift(self):
        """Test a wrapped Fourier model evaluates like sin."""
        drift = simulator.DriftSpec.fourier(sine_embedding(0.5))
        x = np.linspace(-3.0, 3.0, 7)[:, None]
        np.testing.assert_allclose(drift(x), np.sin(x), atol=1e-12)
        self.assertEqual(drift.dim, 1)

    def test_unknown_drift(self):
        """Test unknown names are rejected."""
        with self.assertRaises(simulator.DatasetError):
            simulator.DriftSpec("lorenz")
        with self.assertRaises(simulator.DatasetError):
            simulator.DriftSpec("fourier")

    def test_dataset_shape(self):
        """Test saved observation count and spacing."""
        dataset = self.generate()
        self.assertEqual(dataset.n_trajectories, 6)
        self.assertEqual(dataset.n_observations, 5)
        self.assertAlmostEqual(dataset.dt, 0.05)
        for trajectory in dataset.trajectories:
            np.testing.assert_array_equal(trajectory.states[0], [0.0])
        self.assertEqual(dataset.provenance["drift"], "sine1d")

    def test_reproducible_and_worker_independent(self):
        """Test a fixed seed gives the same data for any worker count."""
        a = self.generate()
        b = self.generate(workers=3)
        np.testing.assert_array_equal(a.valid_states(), b.valid_states())
        c = self.generate(seed=2)
        self.assertFalse(np.allclose(a.valid_states(), c.valid_states()))

    def test_zero_noise_is_deterministic(self):
        """Test g = 0 follows the Euler scheme of the drift alone."""
        dataset = self.generate(
            g=(0.0,),
            init=simulator.PointInit((1.0,)),
            total_steps=10,
            save_stride=10,
            fine_step=0.1,
            n_trajectories=2,
        )
        x = 1.0
        for _ in range(10):
            x = x + 0.1 * np.sin(x)
        np.testing.assert_allclose(dataset.snapshot(1)[:, 0], [x, x])

    def test_ou_mean(self):
        """Test the OU sample mean at t = 1 is X0 exp(-t)."""
        dataset = self.generate(
            drift=simulator.DriftSpec("ou"),
            g=(0.5,),
            alpha=2.0,
            init=simulator.PointInit((2.0,)),
            total_steps=1000,
            save_stride=1000,
            n_trajectories=2000,
        )
        x = dataset.snapshot(1)[:, 0]
        standard_error = np.std(x, ddof=1) / np.sqrt(x.size)
        self.assertLess(
            abs(np.mean(x) - 2.0 * np.exp(-1.0)), 3.0 * standard_error
        )

    @unittest.skipUnless(
        os.environ.get("LEVYID_SLOW"), "set LEVYID_SLOW to run"
    )
    def test_ou_weak_order(self):
        """Test the simulated OU law converges at first order in h."""
        result = ou_weak_order()
        self.assertTrue(result.passed, result.line())
        self.assertLess(result.value, 1.3)

    def test_initial_conditions(self):
        """Test gaussian and grid starts."""
        dataset = self.generate(
            init=simulator.GaussianInit(1.0 / 3.0), n_trajectories=200
        )
        x0 = dataset.snapshot(0)[:, 0]
        self.assertAlmostEqual(float(np.std(x0)), 1.0 / 3.0, delta=0.06)

        grid = simulator.GridInit(-1.0, 1.0, 3)
        dataset = simulator.generate_dataset(
            simulator.DriftSpec("maier_stein"),
            (0.1,),
            1.5,
            grid,
            1e-3,
            10,
            10,
            9,
            0,
        )
        np.testing.assert_array_equal(dataset.snapshot(0), grid.points(2))
        with self.assertRaises(simulator.DatasetError):
            self.generate(init=grid, n_trajectories=4)

    def test_bad_arguments(self):
        """Test invalid step counts and domains."""
        with self.assertRaises(simulator.DatasetError):
            self.generate(save_stride=300)
        with self.assertRaises(simulator.DatasetError):
            self.generate(n_trajectories=0)
        with self.assertRaises(ValueError):
            self.generate(alpha=0.9)

    def test_blow_up_is_flagged(self):
        """Test overflowing paths are NaN padded and invalid."""
        drift = simulator.DriftSpec("doublewell1d")
        dataset = self.generate(
            drift=drift,
            init=simulator.PointInit((10.0,)),
            fine_step=0.5,
            total_steps=20,
            save_stride=1,
            n_trajectories=2,
        )
        self.assertEqual(dataset.n_valid, 0)
        for trajectory in dataset.trajectories:
            self.assertFalse(trajectory.valid)
            self.assertTrue(np.isnan(trajectory.states[-1, 0]))
            self.assertEqual(trajectory.states.shape, (21, 1))
        with self.assertRaises(simulator.EmptyDatasetError):
            dataset.valid_states()

    def test_filter_box(self):
        """Test box filtering keeps only contained paths."""
        dataset = self.generate(n_trajectories=20)
        filtered = simulator.filter_box(dataset, (-0.5,), (0.5,))
        for trajectory in filtered.trajectories:
            self.assertTrue(np.all(np.abs(trajectory.states) <= 0.5))
        self.assertEqual(filtered.provenance["generated"], 20)
        self.assertEqual(
            filtered.provenance["retained"], filtered.n_trajectories
        )
        with self.assertRaises(simulator.EmptyDatasetError):
            simulator.filter_box(dataset, (5.0,), (6.0,))

    def test_dataset_round_trip(self):
        """Test write then read reproduces states bit for bit."""
        dataset = self.generate()
        dataset.trajectories[1].valid = False
        path = Path(self.tmp.name) / "data.csv"
        simulator.write_dataset(dataset, path)
        reread = simulator.read_dataset(path)

        self.assertEqual(reread.dim, dataset.dim)
        self.assertEqual(reread.dt, dataset.dt)
        self.assertEqual(reread.n_valid, dataset.n_valid)
        self.assertEqual(reread.provenance, dataset.provenance)
        for a, b in zip(dataset.trajectories, reread.trajectories):
            np.testing.assert_array_equal(a.states, b.states)

    def test_read_errors_have_line_numbers(self):
        """Test malformed files report where they fail."""
        path = Path(self.tmp.name) / "bad.csv"
        path.write_text("not-a-dataset\n")
        with self.assertRaises(simulator.DatasetFormatError) as context:
            simulator.read_dataset(path)
        self.assertEqual(context.exception.line, 1)

        dataset = self.generate(n_trajectories=1)
        simulator.write_dataset(dataset, path)
        lines = path.read_text().splitlines()
        lines[-1] = "abc"
        path.write_text("\n".join(lines) + "\n")
        with self.assertRaises(simulator.DatasetFormatError) as context:
            simulator.read_dataset(path)
        self.assertEqual(context.exception.line, len(lines))


if __name__ == "__main__":
    unittest.main(buffer=True)
