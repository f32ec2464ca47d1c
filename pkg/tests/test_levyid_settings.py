"""levyid - Lévy SDE drift identification : Test settings handling."""

import configparser
import inspect
import logging
import os
import sys
import tempfile
import unittest
from pathlib import Path

current_dir = os.path.dirname(
    os.path.abspath(inspect.getfile(inspect.currentframe()))
)
parent_dir = os.path.dirname(current_dir)
sys.path.insert(0, parent_dir)

import levyid.settings as settings  # noqa


class LevyIdSettingsTest(unittest.TestCase):
    """Test class for levyid settings."""

    def setUp(self):
        """Prepare for test."""
        logging.disable(logging.CRITICAL)  # disable most logging during test
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "levyid.cfg"

    def tearDown(self):
        """Clean up after test."""
        self.tmp.cleanup()
        logging.disable(logging.NOTSET)

    def test_defaults_without_file(self):
        """Test every documented key has its default."""
        values = settings.get_settings(self.path)
        self.assertEqual(values["simulate"]["drift"], "sine1d")
        self.assertEqual(values["simulate"]["g"], (0.25,))
        self.assertEqual(values["grid"], {"L": 2, "M": 1028, "n_L": 8})
        self.assertEqual(values["propagator"]["nu"], 100)
        self.assertEqual(values["model"]["J"], 4)
        settings.validate(values)

    def test_file_values_are_typed(self):
        """Test values read from file get the default's type."""
        self.path.write_text(
            "[grid]\nM = 256\n\n[simulate]\ng = 0.5, 0.25\nalpha = 1.5\n"
        )
        values = settings.get_settings(self.path)
        self.assertEqual(values["grid"]["M"], 256)
        self.assertEqual(values["simulate"]["g"], (0.5, 0.25))
        self.assertEqual(values["simulate"]["alpha"], 1.5)

    def test_unknown_key_in_file(self):
        """Test unknown keys name themselves."""
        self.path.write_text("[grid]\nsize = 3\n")
        with self.assertRaises(settings.ConfigError) as context:
            settings.get_settings(self.path)
        self.assertEqual(context.exception.key, "grid.size")

    def test_overrides(self):
        """Test section.key=value overrides are coerced."""
        values = settings.get_settings(self.path)
        settings.apply_overrides(
            values, ["grid.M=64", "loss.mu=0.5", "eval.bounds=-1,1,-2,2"]
        )
        self.assertEqual(values["grid"]["M"], 64)
        self.assertEqual(values["loss"]["mu"], 0.5)
        self.assertEqual(values["eval"]["bounds"], (-1.0, 1.0, -2.0, 2.0))

    def test_bad_overrides(self):
        """Test malformed overrides raise ConfigError."""
        values = settings.get_settings(self.path)
        for item in ("grid.M", "gridM=3", "grid.nope=1", "grid.M=abc"):
            with self.assertRaises(settings.ConfigError):
                settings.apply_overrides(values, [item])

    def test_validate_names_key(self):
        """Test range violations name the offending key."""
        cases = {
            "simulate.alpha=2.5": "simulate.alpha",
            "simulate.drift=lorenz": "simulate.drift",
            "loss.mode=other": "loss.mode",
            "propagator.decay=exact": "propagator.decay",
            "grid.M=0": "grid.M",
            "train.gtol=0": "train.gtol",
            "model.symmetry=odd,sideways": "model.symmetry",
            "loss.pad=-2": "loss.pad",
            "train.memory=0": "train.memory",
        }
        for item, key in cases.items():
            values = settings.apply_overrides(
                settings.get_settings(self.path), [item]
            )
            with self.assertRaises(settings.ConfigError) as context:
                settings.validate(values)
            self.assertEqual(context.exception.key, key)

    def test_explicit_parity_rows(self):
        """Test parity tables are accepted as symmetry settings."""
        values = settings.apply_overrides(
            settings.get_settings(self.path),
            ["model.symmetry=odd,even;even,odd"],
        )
        settings.validate(values)

    def test_write_only_differences(self):
        """Test written files hold only non-default values."""
        values = settings.get_settings(self.path)
        settings.apply_overrides(values, ["grid.M=128", "simulate.g=0.1"])
        settings.write_settings(values, self.path, update=False)

        config = configparser.RawConfigParser()
        config.optionxform = str
        config.read(self.path)
        self.assertEqual(sorted(config.sections()), ["grid", "simulate"])
        self.assertEqual(config.get("grid", "M"), "128")
        self.assertEqual(list(config.options("grid")), ["M"])

        reread = settings.get_settings(self.path)
        self.assertEqual(reread["grid"]["M"], 128)
        self.assertEqual(reread["simulate"]["g"], (0.1,))

    def test_update_keeps_existing(self):
        """Test update mode keeps keys already in the file."""
        self.path.write_text("[train]\nmax_iter = 5\n")
        values = settings.get_settings(self.path)
        settings.apply_overrides(values, ["grid.n_L=4"])
        settings.write_settings(values, self.path, update=True)
        reread = settings.get_settings(self.path)
        self.assertEqual(reread["train"]["max_iter"], 5)
        self.assertEqual(reread["grid"]["n_L"], 4)


if __name__ == "__main__":
    unittest.main(buffer=True)
