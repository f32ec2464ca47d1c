"""levyid - Lévy SDE drift identification : Test the CLI application."""

import csv
import inspect
import io
import logging
import os
import sys
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path

import yaml

current_dir = os.path.dirname(
    os.path.abspath(inspect.getfile(inspect.currentframe()))
)
parent_dir = os.path.dirname(current_dir)
sys.path.insert(0, parent_dir)

import levyid.cli as cli  # noqa

SMALL = [
    "simulate.fine_step=0.01",
    "simulate.total_steps=20",
    "simulate.save_stride=5",
    "simulate.n_trajectories=8",
    "simulate.init=gaussian",
    "grid.M=32",
    "grid.n_L=4",
    "model.J=2",
    "propagator.nu=5",
    "train.max_iter=3",
    "eval.n_test=4",
    "eval.resolution=5",
    "eval.scan_stop=0.1",
    "eval.scan_step=0.05",
]


class LevyIdCliTest(unittest.TestCase):
    """Test class for the levyid command line."""

    def setUp(self):
        """Prepare for test."""
        logging.disable(logging.CRITICAL)  # disable most logging during test
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.config = str(self.dir / "levyid.cfg")

    def tearDown(self):
        """Clean up after test."""
        self.tmp.cleanup()
        logging.disable(logging.NOTSET)

    def run_cli(self, *argv, small=True):
        """Run the CLI and return the exit code and stdout."""
        args = list(argv) + ["--config", self.config]
        if small:
            for item in SMALL:
                args += ["--set", item]
        output = io.StringIO()
        with redirect_stdout(output):
            code = cli.main(args)
        return code, output.getvalue()

    def path(self, name):
        """Path inside the temporary directory."""
        return str(self.dir / name)

    def test_usage_errors(self):
        """Test missing and unknown commands exit with 2."""
        self.assertEqual(cli.main([]), 2)
        self.assertEqual(cli.main(["fly"]), 2)
        code, _ = self.run_cli("stability", "--set", "grid.M=abc")
        self.assertEqual(code, 2)
        code, _ = self.run_cli("stability", "--set", "simulate.alpha=3")
        self.assertEqual(code, 2)
        code, _ = self.run_cli("oracle", "no_such_oracle")
        self.assertEqual(code, 2)

    def test_version(self):
        """Test --version exits cleanly."""
        with redirect_stdout(io.StringIO()):
            self.assertEqual(cli.main(["--version"]), 0)

    def test_help_names_decay_modes(self):
        """Test the train help explains both decay forms."""
        for argv in (["--help"], ["train", "--help"]):
            buffer = io.StringIO()
            with redirect_stdout(buffer):
                self.assertEqual(cli.main(argv), 0)
            text = " ".join(buffer.getvalue().split())
            self.assertIn("componentwise", text)
            self.assertIn("projected", text)
            self.assertIn("agree in one dimension", text)

    def test_stability(self):
        """Test the printed margin for g = 0.1 and g = 1."""
        code, output = self.run_cli("stability", "--g", "0.1", "--alpha", "1")
        self.assertEqual(code, 0)
        self.assertAlmostEqual(float(output.strip()), 0.955, delta=0.005)
        code, output = self.run_cli("stability", "--g", "1", "--alpha", "1")
        self.assertEqual(code, 0)
        self.assertEqual(output.strip(), "inf")
        code, _ = self.run_cli("stability", "--g", "0", "--alpha", "1")
        self.assertEqual(code, 2)

    def test_stability_curve(self):
        """Test the curve CSV and its manifest."""
        curve = self.path("curve.csv")
        code, _ = self.run_cli(
            "stability", "--g", "0.1", "--curve", curve, "--points", "11"
        )
        self.assertEqual(code, 0)
        with open(curve, newline="") as file_handle:
            rows = list(csv.reader(file_handle))
        self.assertEqual(rows[0], ["w", "amplification"])
        self.assertEqual(len(rows), 12)
        self.assertTrue(Path(curve + ".manifest.yaml").exists())

    def test_missing_dataset(self):
        """Test an unreadable input exits with 1."""
        code, _ = self.run_cli("train", "-d", self.path("missing.csv"))
        self.assertEqual(code, 1)

    def test_pipeline(self):
        """Test simulate, train, scan and eval on a tiny problem."""
        data = self.path("data.csv")
        coefficients = self.path("theta.csv")
        report = self.path("report.yaml")

        code, output = self.run_cli("simulate", "-o", data)
        self.assertEqual(code, 0)
        self.assertTrue(Path(data).exists())
        with open(data + ".manifest.yaml") as file_handle:
            manifest = yaml.safe_load(file_handle)
        self.assertEqual(manifest["command"], "simulate")
        self.assertEqual(manifest["files"]["dataset"], data)
        self.assertEqual(manifest["settings"]["grid"]["M"], 32)

        code, output = self.run_cli(
            "train", "-d", data, "-o", coefficients, "--report", report
        )
        self.assertEqual(code, 0)
        self.assertIn("coefficient MAE", output)
        with open(report) as file_handle:
            self.assertIsNotNone(yaml.safe_load(file_handle)["coeff_mae"])

        scan = self.path("scan.csv")
        code, output = self.run_cli("scan", "-d", data, "-o", scan)
        self.assertEqual(code, 0)
        with open(scan, newline="") as file_handle:
            self.assertEqual(len(list(csv.reader(file_handle))), 4)

        evaluation = self.path("eval.yaml")
        code, output = self.run_cli(
            "eval", "-c", coefficients, "-d", data, "-o", evaluation
        )
        self.assertEqual(code, 0)
        with open(evaluation) as file_handle:
            values = yaml.safe_load(file_handle)
        for key in ("coeff_mae", "mmae", "miqr", "loss", "chained_loss"):
            self.assertIsNotNone(values[key])
        self.assertEqual(values["n_test"], 4)

    def test_portrait(self):
        """Test the truth portrait of a 2D field."""
        output_path = self.path("portrait.csv")
        code, output = self.run_cli(
            "portrait",
            "-o",
            output_path,
            "--set",
            "simulate.drift=poly_doublewell2d",
        )
        self.assertEqual(code, 0)
        with open(output_path, newline="") as file_handle:
            self.assertEqual(len(list(csv.reader(file_handle))), 26)
        self.assertTrue(
            (self.dir / "portrait_fixed_points.csv").exists()
        )

    def test_oracle(self):
        """Test a named fast oracle passes."""
        code, output = self.run_cli("oracle", "stability", small=False)
        self.assertEqual(code, 0)
        self.assertTrue(output.startswith("PASS"))


if __name__ == "__main__":
    unittest.main(buffer=True)
