"""Tests for labelled mobiles, bridges and the spine tree."""

import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from stable_maps.errors import (  # noqa: E402
    InvalidParameter,
    MalformedForest,
    SamplerStall,
    ThresholdTooSmall,
)
from stable_maps.mobiles import (  # noqa: E402
    BLACK,
    WHITE,
    LabelledForest,
    Mobile,
    coding_walks,
    mobile_from_text,
    sample_bridge,
    sample_forest,
    sample_mobile,
    sample_spine_mobile,
    sigma_r,
    spawn_generators,
)
from stable_maps.weights import (  # noqa: E402
    build_critical_data,
    critical_angulation,
)


class TestBridges(unittest.TestCase):
    """Bridges with increments >= -1"""

    def test_short_bridges(self):
        """Rejection bridges start and end at the shift."""
        rng = np.random.default_rng(1)
        for k in range(1, 40):
            labels = sample_bridge(k, 3, rng)
            self.assertEqual(len(labels), k + 1)
            self.assertEqual(labels[0], 3)
            self.assertEqual(labels[-1], 3)
            self.assertGreaterEqual(np.diff(labels).min(), -1)

    def test_long_bridges(self):
        """Composition bridges satisfy the same constraints."""
        rng = np.random.default_rng(2)
        labels = sample_bridge(500, -2, rng)
        self.assertEqual(labels[0], -2)
        self.assertEqual(labels[-1], -2)
        self.assertGreaterEqual(np.diff(labels).min(), -1)

    def test_two_step_bridge_law(self):
        """k = 2: increments (0, 0) w.p. 1/3, (1, -1) and (-1, 1) 1/3."""
        rng = np.random.default_rng(3)
        draws = [tuple(sample_bridge(2, 0, rng)) for _ in range(3000)]
        flat = sum(1 for d in draws if d == (0, 0, 0)) / len(draws)
        self.assertAlmostEqual(flat, 1 / 3, delta=0.04)

    def test_invalid_length(self):
        """Zero-length bridges are rejected."""
        with self.assertRaises(InvalidParameter):
            sample_bridge(0)


class TestMobileText(unittest.TestCase):
    """Compact text form of mobiles"""

    def test_round_trip(self):
        """Parsing and writing back gives the same text."""
        text = "0[(1 0)()] 1[(0[(1)])]"
        mobile = mobile_from_text(text)
        self.assertEqual(mobile.to_text(), text)
        self.assertEqual(len(mobile.roots), 2)
        self.assertEqual(mobile.n_white, 6)

    def test_structure(self):
        """Colours alternate and children keep planar order."""
        mobile = Mobile.from_text("0[(1 0)()]")
        root = mobile.roots[0]
        blacks = mobile.children[root]
        self.assertEqual([mobile.color[b] for b in blacks], [BLACK, BLACK])
        self.assertEqual(
            [mobile.label[w] for w in mobile.children[blacks[0]]], [1, 0]
        )
        self.assertEqual(mobile.grandchildren(root), 2)

    def test_malformed(self):
        """Unbalanced text raises MalformedForest."""
        for text in ("0[(1", "(1)", "0]", "0[1]"):
            with self.assertRaises(MalformedForest):
                Mobile.from_text(text)

    def test_bridge_violation(self):
        """A label drop of two around a black vertex is rejected."""
        mobile = Mobile.from_text("0[(-2)]")
        with self.assertRaises(MalformedForest):
            mobile.check_bridges()

    def test_root_labels_must_form_bridge(self):
        """Cyclic root labels may only drop by one."""
        forest = LabelledForest(Mobile.from_text("0 2"))
        with self.assertRaises(MalformedForest):
            forest.check()
        LabelledForest(Mobile.from_text("0 1")).check()

    def test_colours_alternate(self):
        """A white child of a white node is refused."""
        mobile = Mobile()
        root = mobile.add(WHITE)
        with self.assertRaises(MalformedForest):
            mobile.add(WHITE, root, 0)


class TestSampling(unittest.TestCase):
    """Random mobiles for critical quadrangulations"""

    @classmethod
    def setUpClass(cls):
        cls.data = build_critical_data(critical_angulation(2), nu_cutoff=256)

    def test_forest_is_valid(self):
        """Sampled forests satisfy both bridge conditions."""
        (rng,) = spawn_generators(11, 1)
        for p in (1, 2, 5):
            forest = sample_forest(self.data, p, rng, node_cap=10**6)
            self.assertEqual(forest.p, p)
            self.assertEqual(forest.root_labels[0], 0)
            forest.check()

    def test_black_degrees_are_quadrangular(self):
        """Quadrangulation blacks have exactly one white child."""
        (rng,) = spawn_generators(12, 1)
        mobile = sample_mobile(self.data, rng, node_cap=10**6)
        for node, color in enumerate(mobile.color):
            if color == BLACK:
                self.assertEqual(len(mobile.children[node]), 1)

    def test_same_seed_same_mobile(self):
        """Sampling is deterministic given the seed."""
        texts = []
        for _ in range(2):
            (rng,) = spawn_generators(13, 1)
            forest = sample_forest(self.data, 3, rng, 10**6)
            texts.append(forest.mobile.to_text())
        self.assertEqual(texts[0], texts[1])

    def test_node_cap(self):
        """A tiny node cap stalls on a large forest."""
        (rng,) = spawn_generators(14, 1)
        with self.assertRaises(SamplerStall):
            for _ in range(200):
                sample_forest(self.data, 50, rng, node_cap=5)

    def test_coding_walks(self):
        """The Lukasiewicz walk of p trees first hits -p at the end."""
        (rng,) = spawn_generators(15, 1)
        forest = sample_forest(self.data, 4, rng, node_cap=10**6)
        walk, labels = coding_walks(forest)
        self.assertEqual(len(walk), forest.mobile.n_white + 1)
        self.assertEqual(walk[-1], -4)
        self.assertGreater(walk[:-1].min(), -4)
        self.assertEqual(len(labels), forest.mobile.n_white)


class TestSpine(unittest.TestCase):
    """Tree conditioned to survive, chopped at a label threshold"""

    @classmethod
    def setUpClass(cls):
        cls.data = build_critical_data(critical_angulation(2), nu_cutoff=256)
        (rng,) = spawn_generators(21, 1)
        cls.spine = sample_spine_mobile(cls.data, 3, rng, node_cap=10**7)

    def test_marker(self):
        """Only the marker drops below the threshold along the spine."""
        labels = self.spine.spine_labels()
        self.assertLess(labels[-1], -6)
        self.assertTrue(all(v >= -6 for v in labels[:-1]))
        self.assertEqual(self.spine.spine_whites[-1], self.spine.marker)
        self.assertEqual(self.spine.mobile.children[self.spine.marker], [])

    def test_bridges_hold(self):
        """Labels along the spine tree obey the bridge condition."""
        self.spine.mobile.check_bridges()

    def test_deeper_threshold_extends(self):
        """Same stream, deeper threshold: the shallow spine is a prefix."""
        (rng,) = spawn_generators(21, 1)
        deeper = sample_spine_mobile(self.data, 6, rng, node_cap=10**7)
        shallow_labels = self.spine.spine_labels()[:-1]
        self.assertEqual(
            deeper.spine_labels()[: len(shallow_labels)], shallow_labels
        )

    def test_sigma_r(self):
        """Exit index below -r is reached and max label bounds r."""
        index, largest = sigma_r(self.spine, 3)
        self.assertGreaterEqual(index, 1)
        self.assertGreaterEqual(largest, 4)
        with self.assertRaises(ThresholdTooSmall):
            sigma_r(self.spine, 10)

    def test_chopped_whites(self):
        """Chopping at the sample threshold keeps the marker's ancestors."""
        whites = self.spine.chopped_whites(3)
        self.assertIn(self.spine.root, whites)
        self.assertIn(self.spine.marker, whites)
        with self.assertRaises(ThresholdTooSmall):
            self.spine.chopped_whites(4)

    def test_grafted_populations(self):
        """Left and right populations are counted separately."""
        left, right = self.spine.grafted_populations()
        total = self.spine.mobile.n_white - len(self.spine.spine_whites)
        self.assertEqual(left + right, total)


def _white_key(mobile, w):
    """Nested (label, subtrees) key of the white subtree at ``w``."""
    return (
        mobile.label[w],
        tuple(
            tuple(_white_key(mobile, c) for c in mobile.children[b])
            for b in mobile.children[w]
        ),
    )


def _small_mobiles(data, label, budget):
    """Every quadrangulation mobile with at most ``budget`` whites.

    Yields ``(key, probability, whites)`` with the exact sampling
    probability: white offspring by ``mu_white``, one white per black
    and a uniform shift in ``{-1, 0, 1}``.
    """
    for c in range(budget):
        for subtrees, prob, whites in _black_rows(data, label, c, budget - 1):
            yield (label, subtrees), data.mu_white.prob(c) * prob, 1 + whites


def _black_rows(data, label, c, budget):
    if c == 0:
        yield (), 1.0, 0
        return
    for shift in (-1, 0, 1):
        for key, prob, whites in _small_mobiles(data, label + shift, budget):
            rest = _black_rows(data, label, c - 1, budget - whites)
            for keys, more, used in rest:
                yield ((key,),) + keys, prob * more / 3.0, whites + used


class TestExactLaw(unittest.TestCase):
    """Sampled small mobiles against their exact probabilities"""

    def test_small_mobiles(self):
        """Frequencies of mobiles with at most 3 whites match exactly."""
        data = build_critical_data(critical_angulation(2), nu_cutoff=256)
        self.assertAlmostEqual(data.mu_black.prob(1), 1.0)
        exact = {key: prob for key, prob, _ in _small_mobiles(data, 0, 3)}
        self.assertEqual(len(exact), 1 + 3 + 9 + 9)
        self.assertAlmostEqual(exact[(0, ())], data.mu_white.prob(0))
        (rng,) = spawn_generators(21, 1)
        draws = 40_000
        counts = dict.fromkeys(exact, 0)
        for _ in range(draws):
            try:
                mobile = sample_mobile(data, rng, node_cap=12)
            except SamplerStall:
                continue
            key = _white_key(mobile, mobile.roots[0])
            if key in counts:
                counts[key] += 1
        seen = np.array([counts[key] for key in exact]) / draws
        expected = np.array(list(exact.values()))
        rest = abs((1 - seen.sum()) - (1 - expected.sum()))
        self.assertLess(0.5 * (np.abs(seen - expected).sum() + rest), 0.02)


if __name__ == "__main__":
    unittest.main()
