"""Half-edge planar maps with balls, hulls, duals and apertures.

Half-edges come in pairs ``(2e, 2e + 1)`` so the twin of ``h`` is
``h ^ 1``. ``nxt[h]`` is the next half-edge around the face on the left
of ``h``; the rotation around a vertex is ``nxt[twin(h)]``. Maps cut out
of an infinite object keep ``MISSING`` entries where the face structure
is unknown; faces touching them are incomplete and carry no id.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import (
    FrozenSet,
    Hashable,
    Iterable,
    List,
    Optional,
    Sequence,
    Set,
    Tuple,
)

import networkx as nx
import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from stable_maps.errors import InvalidParameter, MapError, TrustRadiusExceeded

logger = logging.getLogger(__name__)

MISSING = -1
FORMAT_HEADER = "stable-maps planar-map"
FORMAT_VERSION = 1


def twin(h: int) -> int:
    """Opposite half-edge of ``h``."""
    return h ^ 1


class PlanarMap:
    """Rooted bipartite planar map stored as half-edge arrays.

    Args:
        origin: Vertex index of each half-edge, ``MISSING`` if unused.
        nxt: Face successor of each half-edge, ``MISSING`` if unknown.
        vertex_keys: Stable identifier per vertex, e.g. ``(tree, node)``.
        labels: Integer label per vertex.
        root: Root half-edge.
        star: Index of the distinguished vertex, if any.
        boundary: A half-edge of the external face, if any.
        squeeze: ``(x1, x2)`` when the external face has degree 2 and is
            collapsed into the root edge ``twin(x1)``.
        trust_radius: Radius up to which balls around the root vertex
            are certified.
    """

    def __init__(
        self,
        origin: Sequence[int],
        nxt: Sequence[int],
        vertex_keys: Sequence[Hashable],
        labels: Sequence[int],
        root: int,
        star: int = MISSING,
        boundary: int = MISSING,
        squeeze: Optional[Tuple[int, int]] = None,
        trust_radius: Optional[int] = None,
    ):
        self.origin = np.asarray(origin, dtype=np.int64)
        self.nxt = np.asarray(nxt, dtype=np.int64)
        if len(self.origin) % 2 or len(self.nxt) != len(self.origin):
            raise MapError("half-edge arrays must pair up")
        self.vertex_keys = [tuple(k) for k in vertex_keys]
        self.labels = np.asarray(labels, dtype=np.int64)
        if len(self.labels) != len(self.vertex_keys):
            raise MapError("one label per vertex expected")
        self.root = int(root)
        self.star = int(star)
        self.boundary = int(boundary)
        self.squeeze = tuple(int(x) for x in squeeze) if squeeze else None
        self.trust_radius = trust_radius
        self.face, self.faces = self._trace_faces()
        self.external = (
            int(self.face[self.boundary]) if self.boundary != MISSING
            else MISSING
        )

    def _trace_faces(self) -> Tuple[np.ndarray, List[np.ndarray]]:
        n = len(self.origin)
        face = np.full(n, MISSING, dtype=np.int64)
        seen = np.zeros(n, dtype=bool)
        faces: List[np.ndarray] = []
        for start in range(n):
            if self.origin[start] == MISSING or seen[start]:
                continue
            cycle = [start]
            seen[start] = True
            h = int(self.nxt[start])
            while h != start and h != MISSING and not seen[h]:
                cycle.append(h)
                seen[h] = True
                h = int(self.nxt[h])
            if h == start:
                face[cycle] = len(faces)
                faces.append(np.array(cycle, dtype=np.int64))
        return face, faces

    @property
    def n_vertices(self) -> int:
        """Number of vertices."""
        return len(self.vertex_keys)

    @cached_property
    def half_edges(self) -> np.ndarray:
        """Indices of the half-edges in use."""
        return np.flatnonzero(self.origin != MISSING)

    @property
    def n_edges(self) -> int:
        """Number of edges."""
        return len(self.half_edges) // 2

    @property
    def n_faces(self) -> int:
        """Number of complete faces."""
        return len(self.faces)

    @property
    def is_complete(self) -> bool:
        """Whether every half-edge lies on a complete face."""
        return bool(np.all(self.face[self.half_edges] != MISSING))

    @property
    def root_vertex(self) -> int:
        """Origin of the root edge."""
        return int(self.origin[self.root])

    @property
    def root_face(self) -> int:
        """Face on the right of the root edge."""
        if self.squeeze is not None:
            return int(self.face[twin(self.squeeze[1])])
        return int(self.face[twin(self.root)])

    def target(self, h: int) -> int:
        """Vertex at the tip of ``h``."""
        return int(self.origin[twin(h)])

    def rotation(self, h: int) -> int:
        """Next half-edge out of ``origin(h)``, ``MISSING`` if unknown."""
        return int(self.nxt[twin(h)])

    def face_degree(self, f: int) -> int:
        """Number of half-edges around face ``f``."""
        return len(self.faces[f])

    def face_vertices(self, f: int) -> np.ndarray:
        """Distinct vertices around face ``f``."""
        return np.unique(self.origin[self.faces[f]])

    def boundary_vertices(self) -> np.ndarray:
        """Vertices of the external face."""
        if self.external == MISSING:
            raise InvalidParameter("map has no boundary face")
        return self.face_vertices(self.external)

    def vertex_index(self, key: Hashable) -> int:
        """Vertex with the given key."""
        return self._index[tuple(key)]

    @cached_property
    def _index(self):
        return {key: i for i, key in enumerate(self.vertex_keys)}

    def euler_characteristic(self) -> int:
        """V - E + F over complete faces."""
        return self.n_vertices - self.n_edges + self.n_faces

    def check(self) -> None:
        """Validate a complete map.

        Raises:
            MapError: Incomplete faces, odd face degrees, a broken
                rotation or a non-planar Euler count.
        """
        if not self.is_complete:
            raise MapError("map has incomplete faces")
        h = self.half_edges
        if np.any(self.origin[self.nxt[h]] != self.origin[h ^ 1]):
            raise MapError("face successor does not start at the target")
        odd = [f for f, cyc in enumerate(self.faces) if len(cyc) % 2]
        if odd:
            raise MapError(f"faces {odd[:5]} have odd degree")
        chi = self.euler_characteristic()
        if chi != 2:
            raise MapError(f"Euler characteristic {chi} != 2")

    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric vertex adjacency matrix."""
        return self._adjacency

    @cached_property
    def _adjacency(self) -> sparse.csr_matrix:
        h = self.half_edges
        h = h[(h % 2 == 0) & (self.origin[h ^ 1] != MISSING)]
        rows, cols = self.origin[h], self.origin[h ^ 1]
        n = self.n_vertices
        return sparse.coo_matrix(
            (np.ones(len(h)), (rows, cols)), shape=(n, n)
        ).tocsr()

    def to_text(self) -> str:
        """Versioned edge-list and rotation dump."""
        x1, x2 = self.squeeze if self.squeeze else (MISSING, MISSING)
        trust = MISSING if self.trust_radius is None else self.trust_radius
        lines = [
            f"{FORMAT_HEADER} v{FORMAT_VERSION}",
            f"vertices {self.n_vertices} half-edges {len(self.origin)}",
            f"root {self.root} star {self.star} boundary {self.boundary} "
            f"squeeze {x1} {x2} trust {trust}",
        ]
        for key, label in zip(self.vertex_keys, self.labels):
            lines.append(" ".join(str(v) for v in (label, *key)))
        for o, n in zip(self.origin, self.nxt):
            lines.append(f"{o} {n}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PlanarMap":
        """Parse the output of ``to_text``.

        Raises:
            MapError: Unknown header or truncated body.
        """
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != f"{FORMAT_HEADER} v{FORMAT_VERSION}":
            raise MapError("unrecognised planar map header")
        try:
            sizes = lines[1].split()
            n_vertices, n_half = int(sizes[1]), int(sizes[3])
            meta = lines[2].split()
            root, star, boundary = int(meta[1]), int(meta[3]), int(meta[5])
            x1, x2, trust = int(meta[7]), int(meta[8]), int(meta[10])
            body = lines[3:]
            if len(body) != n_vertices + n_half:
                raise MapError("planar map body has the wrong length")
            labels, keys = [], []
            for ln in body[:n_vertices]:
                values = [int(v) for v in ln.split()]
                labels.append(values[0])
                keys.append(tuple(values[1:]))
            pairs = np.array(
                [[int(v) for v in ln.split()] for ln in body[n_vertices:]],
                dtype=np.int64,
            ).reshape(-1, 2)
        except (IndexError, ValueError) as e:
            raise MapError(f"malformed planar map text: {e}") from e
        return cls(
            pairs[:, 0],
            pairs[:, 1],
            keys,
            labels,
            root,
            star=star,
            boundary=boundary,
            squeeze=(x1, x2) if x1 != MISSING else None,
            trust_radius=None if trust == MISSING else trust,
        )


def bfs_distance(pmap: PlanarMap, sources: Iterable[int]) -> np.ndarray:
    """Graph distance to the nearest source; ``-1`` when unreachable."""
    if np.isscalar(sources):
        sources = [sources]
    sources = np.asarray(list(sources), dtype=np.int64)
    dist = csgraph.dijkstra(
        pmap.adjacency(),
        directed=False,
        indices=sources,
        unweighted=True,
        min_only=True,
    )
    return np.where(np.isfinite(dist), dist, MISSING).astype(np.int64)


def face_min_distance(pmap: PlanarMap, dist: np.ndarray) -> np.ndarray:
    """Smallest vertex distance per face, ``inf`` when unreachable."""
    out = np.full(pmap.n_faces, np.inf)
    for f, cycle in enumerate(pmap.faces):
        d = dist[pmap.origin[cycle]]
        d = d[d >= 0]
        if len(d):
            out[f] = d.min()
    return out


@dataclass(frozen=True)
class Hull:
    """Faces of the ball and of the hull of radius ``radius``."""

    radius: int
    ball_faces: FrozenSet[int]
    hull_faces: FrozenSet[int]
    ball_vertices: int
    hull_vertices: int


def _vertex_count(pmap: PlanarMap, faces: Iterable[int]) -> int:
    faces = list(faces)
    if not faces:
        return 0
    cycles = np.concatenate([pmap.faces[f] for f in faces])
    return len(np.unique(pmap.origin[cycles]))


def ball_and_hull(
    pmap: PlanarMap,
    r: int,
    center: Optional[int] = None,
    dist: Optional[np.ndarray] = None,
) -> Hull:
    """Ball of radius ``r`` and its hull around ``center``.

    The ball keeps the faces with a vertex at distance ``< r``; the hull
    adds every component of the remaining faces that cannot reach an
    incomplete face or the boundary face.

    Raises:
        TrustRadiusExceeded: ``r`` exceeds the certified radius or the
            ball touches an incomplete face.
    """
    if r < 0:
        raise InvalidParameter(f"radius must be >= 0, got {r}")
    if pmap.trust_radius is not None and r > pmap.trust_radius:
        raise TrustRadiusExceeded(
            f"radius {r} beyond trust radius {pmap.trust_radius}"
        )
    if dist is None:
        center = pmap.root_vertex if center is None else center
        dist = bfs_distance(pmap, center)
    near = (dist >= 0) & (dist < r)
    h = pmap.half_edges
    loose = h[pmap.face[h] == MISSING]
    if np.any(near[pmap.origin[loose]]):
        raise TrustRadiusExceeded(f"ball of radius {r} meets the cut")

    fmin = face_min_distance(pmap, dist)
    inner = [f for f in range(pmap.n_faces) if f != pmap.external]
    ball = {f for f in inner if fmin[f] < r}
    return _hull(pmap, r, ball)


def _fill_holes(pmap: PlanarMap, ball: Set[int]) -> Set[int]:
    """``ball`` with every component of the other faces that cannot reach
    an incomplete face or the boundary face."""
    inner = [f for f in range(pmap.n_faces) if f != pmap.external]
    rest = [f for f in inner if f not in ball]
    index = {f: i for i, f in enumerate(rest)}
    inf = len(rest)
    rows: List[int] = []
    cols: List[int] = []
    for f in rest:
        for g in pmap.face[pmap.faces[f] ^ 1]:
            if g in index:
                rows.append(index[f])
                cols.append(index[g])
            elif g == MISSING or (g == pmap.external and not pmap.squeeze):
                rows.append(index[f])
                cols.append(inf)
    if pmap.squeeze is not None:
        a = int(pmap.face[twin(pmap.squeeze[0])])
        b = int(pmap.face[twin(pmap.squeeze[1])])
        if a in index and b in index:
            rows.append(index[a])
            cols.append(index[b])
    graph = sparse.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(inf + 1, inf + 1)
    )
    _, comp = csgraph.connected_components(graph, directed=False)
    return set(ball) | {f for f in rest if comp[index[f]] != comp[inf]}


def _hull(pmap: PlanarMap, r: int, ball: Set[int]) -> Hull:
    hull = _fill_holes(pmap, ball)
    return Hull(
        radius=r,
        ball_faces=frozenset(ball),
        hull_faces=frozenset(hull),
        ball_vertices=_vertex_count(pmap, ball),
        hull_vertices=_vertex_count(pmap, hull),
    )


def dual_ball_and_hull(
    pmap: PlanarMap, r: int, depth: Optional[np.ndarray] = None
) -> Hull:
    """Faces at dual distance ``< r`` from the root face, and their hull.

    Raises:
        TrustRadiusExceeded: A face of the ball borders an incomplete
            face.
    """
    if r < 0:
        raise InvalidParameter(f"radius must be >= 0, got {r}")
    if depth is None:
        depth = dual_distance(pmap)
    ball = {
        int(f) for f in np.flatnonzero((depth >= 0) & (depth < r))
        if f != pmap.external
    }
    for f in ball:
        if np.any(pmap.face[pmap.faces[f] ^ 1] == MISSING):
            raise TrustRadiusExceeded(f"dual ball of radius {r} meets the cut")
    return _hull(pmap, r, ball)


def edge_multiset(pmap: PlanarMap, faces: Iterable[int]) -> List[tuple]:
    """Sorted vertex-key pairs of every edge bordering ``faces``."""
    faces = set(faces)
    h = pmap.half_edges
    h = h[h % 2 == 0]
    keep = [
        e for e in h
        if pmap.face[e] in faces or pmap.face[e ^ 1] in faces
    ]
    keys = pmap.vertex_keys
    return sorted(
        tuple(sorted((keys[pmap.origin[e]], keys[pmap.origin[e ^ 1]])))
        for e in keep
    )


def _dual_edges(pmap: PlanarMap, squeeze: bool) -> np.ndarray:
    """Rows ``(face_a, face_b, half_edge)`` across every known edge."""
    h = pmap.half_edges
    h = h[h % 2 == 0]
    a, b = pmap.face[h], pmap.face[h ^ 1]
    keep = (a != MISSING) & (b != MISSING)
    if squeeze and pmap.squeeze is not None:
        keep &= (a != pmap.external) & (b != pmap.external)
    rows = np.stack([a[keep], b[keep], h[keep]], axis=1)
    if squeeze and pmap.squeeze is not None:
        x1, x2 = pmap.squeeze
        fa, fb = pmap.face[twin(x1)], pmap.face[twin(x2)]
        if fa != MISSING and fb != MISSING:
            rows = np.vstack([rows, [[fa, fb, twin(x1)]]])
    return rows


def dual(pmap: PlanarMap, squeeze: bool = True) -> nx.MultiGraph:
    """Dual multigraph over complete faces, rooted at the root face.

    Parallel dual edges are kept, one per primal edge.
    """
    graph = nx.MultiGraph(root=pmap.root_face)
    for f, cycle in enumerate(pmap.faces):
        if squeeze and pmap.squeeze is not None and f == pmap.external:
            continue
        graph.add_node(f, degree=len(cycle))
    for a, b, h in _dual_edges(pmap, squeeze):
        graph.add_edge(int(a), int(b), half_edge=int(h))
    return graph


def dual_distance(
    pmap: PlanarMap, source: Optional[int] = None, squeeze: bool = True
) -> np.ndarray:
    """Dual graph distance from ``source`` (default the root face)."""
    source = pmap.root_face if source is None else source
    rows = _dual_edges(pmap, squeeze)
    n = pmap.n_faces
    graph = sparse.coo_matrix(
        (np.ones(len(rows)), (rows[:, 0], rows[:, 1])), shape=(n, n)
    ).tocsr()
    dist = csgraph.dijkstra(
        graph, directed=False, indices=source, unweighted=True
    )
    return np.where(np.isfinite(dist), dist, MISSING).astype(np.int64)


def aperture(pmap: PlanarMap) -> int:
    """Largest distance between two vertices of the boundary face."""
    verts = pmap.boundary_vertices()
    dist = csgraph.dijkstra(
        pmap.adjacency(), directed=False, indices=verts, unweighted=True
    )
    return int(dist[:, verts].max())
