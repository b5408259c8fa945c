"""Tests for configuration loading and validation."""

import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import yaml

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from stable_maps.config import (  # noqa: E402
    DEFAULTS,
    ExperimentConfig,
    load_config,
)
from stable_maps.errors import InvalidParameter  # noqa: E402

ENV_KEYS = ("STABLE_MAPS_CONFIG", "STABLE_MAPS_SEED", "STABLE_MAPS_OUTPUT_DIR")


def clean_env():
    env = {k: v for k, v in os.environ.items() if k not in ENV_KEYS}
    return mock.patch.dict(os.environ, env, clear=True)


class TestLoadConfig(unittest.TestCase):
    """YAML loading and environment overrides"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "config.yaml"

    def tearDown(self):
        self.tmp.cleanup()

    def test_explicit_file(self):
        """An explicit file overrides the defaults it names."""
        self.path.write_text(yaml.safe_dump({"replicates": 7, "seed": 3}))
        with clean_env():
            merged = load_config(str(self.path))
        self.assertEqual(merged["replicates"], 7)
        self.assertEqual(merged["seed"], 3)
        self.assertEqual(merged["steps"], DEFAULTS["steps"])

    def test_env_file(self):
        """STABLE_MAPS_CONFIG is used when no path is given."""
        self.path.write_text(yaml.safe_dump({"algorithm": "layered-dual"}))
        with clean_env():
            os.environ["STABLE_MAPS_CONFIG"] = str(self.path)
            merged = load_config(str(self.path.with_name("missing.yaml")))
        self.assertEqual(merged["algorithm"], "layered-dual")

    def test_env_overrides(self):
        """Seed and output directory come from the environment last."""
        self.path.write_text(yaml.safe_dump({"seed": 3}))
        with clean_env():
            os.environ["STABLE_MAPS_SEED"] = "99"
            os.environ["STABLE_MAPS_OUTPUT_DIR"] = "elsewhere"
            merged = load_config(str(self.path))
        self.assertEqual(merged["seed"], 99)
        self.assertEqual(merged["output_dir"], "elsewhere")

    def test_bad_files_skipped(self):
        """Empty, non-mapping and broken files are skipped."""
        for body in ("", "- 1\n- 2\n", "seed: [unclosed\n"):
            self.path.write_text(body)
            with clean_env():
                os.environ["STABLE_MAPS_CONFIG"] = str(
                    self.path.with_name("missing.yaml")
                )
                merged = load_config(str(self.path))
            self.assertIn("seed", merged)
            self.assertIsInstance(merged["seed"], int)


class TestExperimentConfig(unittest.TestCase):
    """Validated configuration"""

    def test_from_defaults(self):
        """The defaults form a valid configuration."""
        config = ExperimentConfig.from_mapping(DEFAULTS)
        self.assertEqual(config.steps, (16, 32, 64, 128, 256))
        self.assertEqual(config.trust_policy, (3, 8))

    def test_unknown_keys_ignored(self):
        """Extra keys do not reach the dataclass."""
        config = ExperimentConfig.from_mapping({"colour": "red", "seed": 1})
        self.assertEqual(config.seed, 1)

    def test_invalid(self):
        """Names, grids and counts are checked."""
        for bad in (
            {"algorithm": "spiral"},
            {"mode": "lattice"},
            {"graph": "line"},
            {"algorithm": "walk-primal", "mode": "chain"},
            {"steps": (16, 32)},
            {"steps": (16, 32, 48)},
            {"radii": (0, 0, 0)},
            {"replicates": 0},
        ):
            with self.subTest(bad=bad):
                with self.assertRaises(InvalidParameter):
                    ExperimentConfig(**bad)

    def test_overrides(self):
        """None values leave fields alone."""
        config = ExperimentConfig()
        changed = config.with_overrides(seed=5, algorithm=None)
        self.assertEqual(changed.seed, 5)
        self.assertEqual(changed.algorithm, config.algorithm)

    def test_hash(self):
        """Equal configurations hash equally; changes alter the hash."""
        a = ExperimentConfig(steps=[4, 8, 16])
        b = ExperimentConfig(steps=(4, 8, 16))
        self.assertEqual(a.config_hash(), b.config_hash())
        self.assertNotEqual(
            a.config_hash(), a.with_overrides(seed=1).config_hash()
        )


if __name__ == "__main__":
    unittest.main()
