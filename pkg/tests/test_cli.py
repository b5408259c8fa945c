"""Tests for the command line and the result files it writes."""

import argparse
import io
import json
import sys
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
import polars as pl

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from stable_maps.cli import main, parse_family  # noqa: E402
from stable_maps.config import ExperimentConfig  # noqa: E402
from stable_maps.maps import PlanarMap  # noqa: E402
from stable_maps.outputs import (  # noqa: E402
    MANIFEST_NAME,
    write_csv,
    write_manifest,
)


class TestParseFamily(unittest.TestCase):
    """Family strings"""

    def test_known(self):
        """Each family form parses to a family mapping."""
        self.assertEqual(
            parse_family("quadrangulation"), {"family": "quadrangulation"}
        )
        self.assertEqual(
            parse_family("angulation:3"), {"family": "angulation", "k": 3}
        )
        self.assertEqual(
            parse_family("stable:2.2:0.3"),
            {"family": "stable", "a": 2.2, "scale": 0.3},
        )

    def test_unknown(self):
        """Anything else is an argument error."""
        for text in ("triangulation", "angulation", "stable:1:2:3"):
            with self.assertRaises(argparse.ArgumentTypeError):
                parse_family(text)


class TestOutputs(unittest.TestCase):
    """CSV tables and the manifest"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = str(Path(self.tmp.name) / "run")

    def tearDown(self):
        self.tmp.cleanup()

    def test_csv(self):
        """Frames are written under their name."""
        frame = pl.DataFrame({"n": [0, 1], "p": [1, 2]})
        path = write_csv(frame, self.out, "peel-uniform-chain")
        self.assertEqual(path.name, "peel-uniform-chain.csv")
        self.assertTrue(pl.read_csv(path).equals(frame))

    def test_manifest_merges(self):
        """Later writes extend the results of earlier ones."""
        config = ExperimentConfig(seed=12)
        write_manifest(config, self.out, {"a": {"slope": np.float64(0.5)}},
                       {"a": 0.1})
        path = write_manifest(config, self.out, {"b": {"slope": float("nan")}})
        manifest = json.loads(path.read_text())
        self.assertEqual(path.name, MANIFEST_NAME)
        self.assertEqual(manifest["seed"], 12)
        self.assertEqual(manifest["config_hash"], config.config_hash())
        self.assertEqual(manifest["results"]["a"]["slope"], 0.5)
        self.assertIsNone(manifest["results"]["b"]["slope"])
        self.assertEqual(manifest["discard_rates"], {"a": 0.1})
        self.assertIn("numpy", manifest["versions"])


class TestMain(unittest.TestCase):
    """Commands end to end"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def run_main(self, argv):
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            code = main(argv)
        return code, buffer.getvalue()

    def test_kernel(self):
        """The kernel command prints the critical data."""
        code, text = self.run_main(["kernel", "--rows", "2"])
        self.assertEqual(code, 0)
        summary = json.loads(text)
        self.assertAlmostEqual(summary["Z"], 2.0)
        self.assertEqual(sorted(summary["kernel"]), ["1", "2"])

    def test_sample_map(self):
        """A pointed disk is written in the text format."""
        code, _ = self.run_main([
            "sample-map", "--kind", "pointed", "--p", "2", "--seed", "3",
            "--out", str(self.root),
        ])
        self.assertEqual(code, 0)
        (path,) = self.root.glob("map-pointed-3.txt")
        pmap = PlanarMap.from_text(path.read_text())
        self.assertEqual(pmap.face_degree(pmap.external), 4)

    def test_estimate(self):
        """Slopes of a CSV column on a grid."""
        rows = [
            {"replicate": r, "n": n, "p": n ** 0.5 * (1 + 0.01 * r)}
            for r in range(30) for n in (16, 32, 64)
        ]
        csv = self.root / "trace.csv"
        pl.DataFrame(rows).write_csv(csv)
        code, text = self.run_main([
            "estimate", str(csv), "--y", "p", "--grid", "16,32,64",
            "--resamples", "10", "--seed", "0",
        ])
        self.assertEqual(code, 0)
        self.assertAlmostEqual(json.loads(text)["slope"], 0.5, places=6)

    def test_errors_return_code(self):
        """Package errors become exit code 2."""
        csv = self.root / "short.csv"
        pl.DataFrame({"n": [16], "p": [1.0]}).write_csv(csv)
        code, _ = self.run_main([
            "estimate", str(csv), "--y", "p", "--grid", "16,32,64",
        ])
        self.assertEqual(code, 2)


if __name__ == "__main__":
    unittest.main()
