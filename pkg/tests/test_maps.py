"""Tests for the half-edge map structure and its metric queries."""

import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from stable_maps.bdg import sample_infinite_map  # noqa: E402
from stable_maps.errors import (  # noqa: E402
    InvalidParameter,
    MapError,
    TrustRadiusExceeded,
)
from stable_maps.maps import (  # noqa: E402
    MISSING,
    PlanarMap,
    aperture,
    ball_and_hull,
    bfs_distance,
    dual,
    dual_ball_and_hull,
    dual_distance,
    edge_multiset,
    twin,
)
from stable_maps.weights import (  # noqa: E402
    build_critical_data,
    critical_angulation,
)


def single_edge() -> PlanarMap:
    return PlanarMap(
        [0, 1], [1, 0], [(0,), (1,)], [0, -1], root=0, star=1, boundary=1
    )


def square(trust_radius=None) -> PlanarMap:
    """A 4-cycle; the face left of half-edge 0 is inner."""
    origin = [0, 1, 1, 2, 2, 3, 3, 0]
    nxt = [2, 7, 4, 1, 6, 3, 0, 5]
    keys = [(v,) for v in range(4)]
    return PlanarMap(
        origin, nxt, keys, [0, 1, 2, 1], root=0, boundary=1,
        trust_radius=trust_radius,
    )


class TestStructure(unittest.TestCase):
    """Faces, Euler count and validation"""

    def test_single_edge(self):
        """One edge bounds a single face of degree two."""
        pmap = single_edge()
        pmap.check()
        self.assertEqual(pmap.n_faces, 1)
        self.assertEqual(pmap.n_edges, 1)
        self.assertEqual(pmap.face_degree(pmap.external), 2)
        self.assertEqual(aperture(pmap), 1)

    def test_square_faces(self):
        """The square has an inner and an outer quadrangle."""
        pmap = square()
        pmap.check()
        self.assertEqual(pmap.n_faces, 2)
        self.assertEqual(pmap.euler_characteristic(), 2)
        self.assertEqual(pmap.external, int(pmap.face[1]))
        self.assertEqual(pmap.root_face, pmap.external)
        self.assertEqual(sorted(pmap.face_vertices(0)), [0, 1, 2, 3])
        self.assertEqual(pmap.target(0), 1)
        self.assertEqual(twin(6), 7)

    def test_rotation(self):
        """Turning around vertex 0 alternates its two half-edges."""
        pmap = square()
        self.assertEqual(pmap.rotation(0), 7)
        self.assertEqual(pmap.rotation(7), 0)

    def test_incomplete_map_fails_check(self):
        """Unknown successors leave faces open."""
        pmap = PlanarMap(
            [0, 1, 1, 2], [MISSING, MISSING, 1, MISSING],
            [(0,), (1,), (2,)], [0, 0, 0], root=0,
        )
        self.assertFalse(pmap.is_complete)
        with self.assertRaises(MapError):
            pmap.check()

    def test_bad_arrays(self):
        """Half-edges must pair up and labels match vertices."""
        with self.assertRaises(MapError):
            PlanarMap([0], [0], [(0,)], [0], root=0)
        with self.assertRaises(MapError):
            PlanarMap([0, 1], [1, 0], [(0,), (1,)], [0], root=0)

    def test_no_boundary(self):
        """Boundary queries need a boundary face."""
        pmap = PlanarMap([0, 1], [1, 0], [(0,), (1,)], [0, 0], root=0)
        with self.assertRaises(InvalidParameter):
            pmap.boundary_vertices()

    def test_text_round_trip(self):
        """The text dump parses back into the same arrays."""
        pmap = square(trust_radius=3)
        back = PlanarMap.from_text(pmap.to_text())
        np.testing.assert_array_equal(back.origin, pmap.origin)
        np.testing.assert_array_equal(back.nxt, pmap.nxt)
        self.assertEqual(back.vertex_keys, pmap.vertex_keys)
        self.assertEqual(back.trust_radius, 3)
        self.assertEqual(back.external, pmap.external)

    def test_text_header(self):
        """Unknown headers are rejected."""
        with self.assertRaises(MapError):
            PlanarMap.from_text("some other format v9\n")


class TestMetric(unittest.TestCase):
    """Distances, balls and hulls"""

    def test_bfs(self):
        """Distances around the square."""
        np.testing.assert_array_equal(
            bfs_distance(square(), 0), [0, 1, 2, 1]
        )
        np.testing.assert_array_equal(
            bfs_distance(square(), [0, 2]), [0, 1, 0, 1]
        )

    def test_aperture(self):
        """Opposite corners of the boundary are two apart."""
        self.assertEqual(aperture(square()), 2)

    def test_ball_and_hull(self):
        """Radius 1 takes the inner face, radius 0 nothing."""
        pmap = square()
        hull = ball_and_hull(pmap, 1)
        self.assertEqual(hull.ball_faces, frozenset({0}))
        self.assertEqual(hull.hull_faces, frozenset({0}))
        self.assertEqual(hull.ball_vertices, 4)
        empty = ball_and_hull(pmap, 0)
        self.assertEqual(empty.hull_faces, frozenset())
        self.assertEqual(empty.hull_vertices, 0)

    def test_trust_radius(self):
        """Radii beyond the certified region are refused."""
        with self.assertRaises(TrustRadiusExceeded):
            ball_and_hull(square(trust_radius=1), 2)
        with self.assertRaises(InvalidParameter):
            ball_and_hull(square(), -1)

    def test_edge_multiset(self):
        """Edges around the inner face, as vertex-key pairs."""
        edges = edge_multiset(square(), {0})
        self.assertEqual(len(edges), 4)
        self.assertIn(((0,), (1,)), edges)

    def test_dual(self):
        """Four parallel dual edges join the two faces."""
        graph = dual(square())
        self.assertEqual(graph.number_of_nodes(), 2)
        self.assertEqual(graph.number_of_edges(), 4)
        np.testing.assert_array_equal(dual_distance(square(), 0), [0, 1])



    def test_dual_ball(self):
        """The root face is the boundary; radius 2 reaches the inner face."""
        empty = dual_ball_and_hull(square(), 1)
        self.assertEqual(empty.ball_faces, frozenset())
        hull = dual_ball_and_hull(square(), 2)
        self.assertEqual(hull.ball_faces, frozenset({0}))
        self.assertEqual(hull.hull_faces, frozenset({0}))
        self.assertEqual(dual_ball_and_hull(square(), 0).hull_vertices, 0)
        with self.assertRaises(InvalidParameter):
            dual_ball_and_hull(square(), -1)


class TestSampledQuadrangulation(unittest.TestCase):
    """Duals and dual balls of a sampled infinite quadrangulation"""

    @classmethod
    def setUpClass(cls):
        data = build_critical_data(critical_angulation(2), nu_cutoff=256)
        cls.pmap = sample_infinite_map(data, 4, seed=3).pmap

    def test_dual_is_four_regular(self):
        """Every face with all its neighbours known has dual degree 4."""
        graph = dual(self.pmap)
        self.assertEqual(graph.graph["root"], self.pmap.root_face)
        complete = 0
        for f in graph.nodes:
            across = self.pmap.face[self.pmap.faces[f] ^ 1]
            self.assertEqual(graph.nodes[f]["degree"], 4)
            if np.all(across != MISSING):
                self.assertEqual(graph.degree(f), 4)
                complete += 1
        self.assertGreater(complete, 0)
        self.assertEqual(dict(dual(square()).degree()), {0: 4, 1: 4})

    def test_dual_hull_contains_ball(self):
        """Dual hulls grow with the radius and contain their ball."""
        depth = dual_distance(self.pmap)
        previous = frozenset()
        for r in range(4):
            hull = dual_ball_and_hull(self.pmap, r, depth)
            self.assertTrue(hull.ball_faces <= hull.hull_faces)
            self.assertTrue(previous <= hull.hull_faces)
            self.assertNotIn(self.pmap.external, hull.hull_faces)
            previous = hull.hull_faces
        with self.assertRaises(TrustRadiusExceeded):
            dual_ball_and_hull(self.pmap, 10_000, depth)


if __name__ == "__main__":
    unittest.main()
