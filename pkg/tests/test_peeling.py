"""Tests for peeling steps, algorithms and explorations."""

import sys
import unittest
from pathlib import Path

import numpy as np
from scipy import stats

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from stable_maps.bdg import sample_infinite_map  # noqa: E402
from stable_maps.errors import InvalidParameter  # noqa: E402
from stable_maps.maps import PlanarMap, twin  # noqa: E402
from stable_maps.peeling import (  # noqa: E402
    C,
    G_LEFT,
    G_RIGHT,
    PEEL_SCHEMA,
    Exploration,
    PeelEvent,
    Submap,
    aperture_gap,
    explore_host,
    initial_trust_radius,
    layered_dual,
    make_algorithm,
    peel_step_chain,
    peel_step_coupled,
    run_exploration,
)
from stable_maps.weights import (  # noqa: E402
    build_critical_data,
    critical_angulation,
)


def square() -> PlanarMap:
    return PlanarMap(
        [0, 1, 1, 2, 2, 3, 3, 0],
        [2, 7, 4, 1, 6, 3, 0, 5],
        [(v,) for v in range(4)],
        [0, 1, 2, 1],
        root=0,
        boundary=1,
    )


def assert_consistent(test: unittest.TestCase, trace) -> None:
    """Half-perimeter and volume follow the recorded events."""
    for n in range(1, len(trace)):
        event = PeelEvent(trace.event_type[n], trace.event_size[n])
        test.assertEqual(trace.p[n], event.apply(trace.p[n - 1]))
        test.assertGreaterEqual(trace.p[n], 1)
        grew = trace.volume[n] - trace.volume[n - 1]
        if event.kind == C:
            test.assertEqual(grew, 0)
        else:
            test.assertGreaterEqual(grew, 1)


class TestEvents(unittest.TestCase):
    """Event bookkeeping"""

    def test_apply(self):
        """C_k adds k - 1, G(j) removes j + 1."""
        self.assertEqual(PeelEvent(C, 3).apply(4), 6)
        self.assertEqual(PeelEvent(G_LEFT, 0).apply(4), 3)
        self.assertEqual(PeelEvent(G_RIGHT, 2).apply(4), 1)

    def test_square(self):
        """Peeling the square: a quadrangle, then a closing gluing."""
        sub = Submap(square())
        self.assertEqual(sub.p, 2)
        self.assertEqual(sub.inner_volume, 0)
        event, sub = peel_step_coupled(sub, 0)
        self.assertEqual(event, PeelEvent(C, 2))
        self.assertEqual(sub.p, 3)
        event = sub.peel(2)
        self.assertEqual(event.kind, G_RIGHT)
        self.assertEqual(event.size, 2)
        self.assertEqual(sub.p, 0)

    def test_peel_requires_entry(self):
        """Only hole half-edges can be peeled."""
        sub = Submap(square())
        with self.assertRaises(InvalidParameter):
            sub.peel(1)


class TestChain(unittest.TestCase):
    """Perimeter and volume chain"""

    @classmethod
    def setUpClass(cls):
        cls.data = build_critical_data(critical_angulation(2), nu_cutoff=256)

    def test_single_step(self):
        """From p = 1 only C_2 is possible for quadrangulations."""
        rng = np.random.default_rng(0)
        event, p, volume = peel_step_chain(1, 0, self.data, rng)
        self.assertEqual(event, PeelEvent(C, 2))
        self.assertEqual((p, volume), (2, 0))

    def test_trace(self):
        """A chain run is consistent and deterministic."""
        trace = run_exploration(self.data, "uniform", "chain", 300, seed=4)
        self.assertEqual(len(trace), 301)
        self.assertEqual((trace.p[0], trace.volume[0]), (1, 0))
        assert_consistent(self, trace)
        again = run_exploration(self.data, "uniform", "chain", 300, seed=4)
        self.assertTrue(trace.to_frame(1).equals(again.to_frame(1)))

    def test_frame_schema(self):
        """Frames carry the documented columns."""
        trace = run_exploration(self.data, "uniform", "chain", 5, seed=1)
        frame = trace.to_frame(replicate=3)
        self.assertEqual(frame.columns, PEEL_SCHEMA)
        self.assertEqual(frame["replicate"].unique().to_list(), [3])

    def test_walk_needs_host(self):
        """Walk algorithms cannot run on the chain alone."""
        with self.assertRaises(InvalidParameter):
            run_exploration(self.data, "walk-primal", "chain", 5, seed=1)
        with self.assertRaises(InvalidParameter):
            run_exploration(self.data, "uniform", "nowhere", 5, seed=1)


class TestCoupled(unittest.TestCase):
    """Explorations of a sampled host"""

    @classmethod
    def setUpClass(cls):
        cls.data = build_critical_data(critical_angulation(2), nu_cutoff=256)
        cls.host = sample_infinite_map(cls.data, 5, seed=17)

    def explore(self, name, steps=12, snapshots=()):
        rng = np.random.default_rng(3)
        return explore_host(
            self.host.pmap, make_algorithm(name, rng), steps, snapshots
        )

    def test_uniform(self):
        """Uniform peeling keeps its distances ordered."""
        trace = self.explore("uniform")
        self.assertEqual(len(trace), 13)
        assert_consistent(self, trace)
        for lo, hi in zip(trace.d_minus, trace.d_plus):
            self.assertLessEqual(lo, hi)

    def test_layered_dual_heights(self):
        """Layer heights never decrease."""
        trace = self.explore("layered-dual")
        heights = [h for h in trace.H if h is not None]
        self.assertTrue(heights)
        self.assertEqual(heights, sorted(heights))
        self.assertEqual(heights[0], 0)

    def test_layered_dual_invariant(self):
        """The root face comes first, then faces behind the hole sit at
        dual depth H or H + 1 at every step."""
        pmap = self.host.pmap
        exploration = Exploration(pmap, "layered-dual")
        algorithm = layered_dual()
        algorithm.bind(exploration)
        first = algorithm.next_edge(exploration)
        self.assertEqual(first, twin(pmap.squeeze[1]))
        exploration.peel(first)
        self.assertIn(pmap.root_face, exploration.submap.explored)
        self.assertEqual(set(algorithm.layers(exploration).tolist()), {0})
        for _ in range(12):
            depth = algorithm.layers(exploration)
            H = int(depth.min())
            self.assertTrue(set(depth.tolist()) <= {H, H + 1})
            edge = algorithm.next_edge(exploration)
            self.assertEqual(exploration.layer, H)
            exploration.peel(edge)

    def test_walk_primal(self):
        """The primal walk drives the peeling and keeps its trace."""
        trace = self.explore("walk-primal", steps=8)
        assert_consistent(self, trace)
        self.assertIsNotNone(trace.walk)
        self.assertGreaterEqual(trace.walk.theta, 1)

    def test_snapshots_and_aperture(self):
        """The distance gap is bounded by the boundary aperture."""
        trace = self.explore("uniform", snapshots=(4, 8, 12))
        self.assertEqual(sorted(trace.snapshots), [4, 8, 12])
        gaps = aperture_gap(trace)
        self.assertTrue((gaps["gap"] <= gaps["aperture"]).all())
        self.assertLess(len(trace.snapshots[4]), len(trace.snapshots[12]) + 1)

    def test_unknown_algorithm(self):
        """Unknown names are refused."""
        with self.assertRaises(InvalidParameter):
            make_algorithm("spiral", np.random.default_rng(0))

    def test_initial_trust_radius(self):
        """The radius grows like n^(1/3) for quadrangulations."""
        self.assertEqual(initial_trust_radius(1, 2.5), 4)
        self.assertEqual(initial_trust_radius(1000, 2.5), 20)


class TestEventFrequencies(unittest.TestCase):
    """Events at half-perimeter 2 on sampled quadrangulations"""

    @classmethod
    def setUpClass(cls):
        cls.data = build_critical_data(critical_angulation(2), nu_cutoff=256)
        cls.events = []
        for seed in range(480):
            trace = run_exploration(cls.data, "uniform", "coupled", 2, seed)
            if trace.p[1] == 2:
                cls.events.append(
                    (trace.event_type[2], trace.event_size[2])
                )

    def test_kernel_row(self):
        """From p = 2 the walk grows with probability 5/6."""
        row = self.data.kernel(2)
        self.assertAlmostEqual(row.prob_c(2), 5 / 6, places=6)
        self.assertEqual(list(row.g_sizes), [0])
        self.assertAlmostEqual(float(row.g_probs[0]), 1 / 12, places=6)

    def test_first_step(self):
        """The first peel always reveals a quadrangle."""
        self.assertEqual(len(self.events), 480)

    def test_frequencies(self):
        """Sampled hosts reproduce the kernel row at p = 2."""
        kinds = [kind for kind, _ in self.events]
        n = len(kinds)
        self.assertAlmostEqual(kinds.count(C) / n, 5 / 6, delta=0.05)
        self.assertAlmostEqual(kinds.count(G_LEFT) / n, 1 / 12, delta=0.04)
        self.assertAlmostEqual(kinds.count(G_RIGHT) / n, 1 / 12, delta=0.04)
        for kind, size in self.events:
            self.assertEqual(size, 2 if kind == C else 0)

    def test_sides_symmetric(self):
        """Left and right swallowing are equally likely."""
        kinds = [kind for kind, _ in self.events]
        left, right = kinds.count(G_LEFT), kinds.count(G_RIGHT)
        self.assertGreater(stats.binomtest(left, left + right).pvalue, 1e-3)
        rng = np.random.default_rng(6)
        draws = [self.data.sampler.sample(5, rng)[0] for _ in range(20_000)]
        left, right = draws.count(G_LEFT), draws.count(G_RIGHT)
        self.assertGreater(stats.binomtest(left, left + right).pvalue, 1e-3)


if __name__ == "__main__":
    unittest.main()
