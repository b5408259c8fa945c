"""Tests for Boltzmann disks and their volumes."""

import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from stable_maps.disks import (  # noqa: E402
    ball_volume_frontier,
    disk_volume,
    lukasiewicz_hitting_time,
    reroot_along_boundary,
    sample_free_disk,
    sample_pointed_disk,
)
from stable_maps.errors import InvalidParameter, SamplerStall  # noqa: E402
from stable_maps.weights import (  # noqa: E402
    DiscreteLaw,
    build_critical_data,
    critical_angulation,
)


def _single_edges(sampler, data, draws=300):
    """Whether each disk of perimeter 2 is a single edge.

    Draws whose mobiles outgrow the node cap are skipped.
    """
    edges = []
    for s in range(draws):
        try:
            disk = sampler(1, data, seed=s, node_cap=10**5)
        except SamplerStall:
            continue
        edges.append(disk.vertex_count == 2)
    return edges


class TestDisks(unittest.TestCase):
    """Pointed and free disks of critical quadrangulations"""

    @classmethod
    def setUpClass(cls):
        cls.data = build_critical_data(critical_angulation(2), nu_cutoff=256)

    def test_pointed_disk(self):
        """A pointed disk is a valid map with boundary 2p."""
        disk = sample_pointed_disk(3, self.data, seed=1, node_cap=10**6)
        disk.pmap.check()
        self.assertTrue(disk.pointed)
        self.assertEqual(disk.pmap.face_degree(disk.pmap.external), 6)
        self.assertGreaterEqual(disk.vertex_count, 4)
        self.assertGreaterEqual(disk.inner_vertex_count, 0)

    def test_free_disk(self):
        """Free disks are accepted after finitely many draws."""
        disk = sample_free_disk(2, self.data, seed=2, node_cap=10**6)
        disk.pmap.check()
        self.assertFalse(disk.pointed)
        self.assertGreaterEqual(disk.attempts, 1)
        again = sample_free_disk(2, self.data, seed=2, node_cap=10**6)
        self.assertEqual(again.pmap.to_text(), disk.pmap.to_text())

    def test_free_disk_stall(self):
        """No acceptance within a zero attempt cap."""
        with self.assertRaises(SamplerStall):
            sample_free_disk(2, self.data, seed=2, attempt_cap=0)

    def test_invalid_perimeter(self):
        """Disks need a positive half-perimeter."""
        with self.assertRaises(InvalidParameter):
            sample_pointed_disk(0, self.data)
        with self.assertRaises(InvalidParameter):
            disk_volume(-1, self.data, np.random.default_rng(0))

    def test_reroot(self):
        """Rerooting keeps the external face on the right of the root."""
        disk = sample_pointed_disk(2, self.data, seed=5, node_cap=10**6)
        pmap = reroot_along_boundary(disk.pmap, np.random.default_rng(1))
        self.assertEqual(pmap.face[pmap.root ^ 1], pmap.external)
        self.assertEqual(pmap.n_vertices, disk.pmap.n_vertices)

    def test_disk_volume(self):
        """A zero perimeter closes on one vertex; otherwise V >= p + 1."""
        rng = np.random.default_rng(3)
        self.assertEqual(disk_volume(0, self.data, rng), 1)
        for p in (1, 2, 4):
            for free in (True, False):
                v = disk_volume(p, self.data, rng, free=free, node_cap=10**6)
                self.assertGreaterEqual(v, p + 1)

    def test_hitting_time(self):
        """A walk with steps -1 only hits -j at time j."""
        law = DiscreteLaw(np.array([1.0]))
        rng = np.random.default_rng(0)
        self.assertEqual(lukasiewicz_hitting_time(law, 5, rng), 5)
        stuck = DiscreteLaw(np.array([0.0, 1.0]))
        self.assertIsNone(lukasiewicz_hitting_time(stuck, 1, rng, cap=100))

    def test_single_edge_pointed(self):
        """Half of the pointed disks of perimeter 2 are a single edge."""
        rng = np.random.default_rng(11)
        volumes = np.array(
            [disk_volume(1, self.data, rng, free=False) for _ in range(4000)]
        )
        self.assertAlmostEqual(np.mean(volumes == 2), 0.5, delta=0.03)
        edges = np.mean(_single_edges(sample_pointed_disk, self.data))
        self.assertAlmostEqual(edges, 0.5, delta=0.09)

    def test_single_edge_free(self):
        """Size-biasing towards small disks favours the single edge."""
        rng = np.random.default_rng(12)
        volumes = np.array(
            [disk_volume(1, self.data, rng) for _ in range(4000)]
        )
        self.assertGreater(np.mean(volumes == 2), 0.55)
        edges = np.mean(_single_edges(sample_free_disk, self.data))
        self.assertGreater(edges, 0.5)

    def test_ball_frontier(self):
        """Frontier quantiles decrease with the level."""
        frontier = ball_volume_frontier(
            2, 2, self.data, replicates=8, seed=9, levels=(0.25, 0.5)
        )
        self.assertEqual(len(frontier.volumes), 8)
        self.assertGreaterEqual(
            frontier.frontier[0.25], frontier.frontier[0.5]
        )


if __name__ == "__main__":
    unittest.main()
