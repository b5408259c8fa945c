"""From labelled mobiles to planar maps.

Every white corner is linked to its successor, the first later corner
whose label is one less. Corners without one link to an extra vertex in
the finite case and stay open in the infinite case. Each black mobile
vertex ends up alone in one face of twice its degree; the corners below
the roots bound the external face.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple, Union

import numpy as np

from stable_maps.errors import (
    InvalidParameter,
    MalformedForest,
    TrustRadiusExceeded,
    TruncationTooShallow,
)
from stable_maps.maps import (
    MISSING,
    PlanarMap,
    ball_and_hull,
    bfs_distance,
    edge_multiset,
    twin,
)
from stable_maps.mobiles import (
    BLACK,
    DEFAULT_NODE_CAP,
    LabelledForest,
    Mobile,
    SpineMobile,
    sample_bridge,
    sample_mobile,
    sample_spine_mobile,
    spawn_generators,
)
from stable_maps.weights import CriticalData

logger = logging.getLogger(__name__)

EXTERNAL = ("external",)
CHOPPED = ("chopped",)
STAR_KEY = (-1, 0)
SPINE_TAG = 0
TRUST_FACTOR = 3
TRUST_MARGIN = 8

Corner = Tuple[Hashable, Hashable, int]


def contour(
    mobile: Mobile,
    roots: Sequence[int],
    tag: int = 0,
    chopped: int = MISSING,
) -> List[Corner]:
    """White corners in contour order as ``(vertex key, owner, label)``.

    Corner ``j`` of a white vertex is owned by its ``j``-th black child,
    the last corner by the black parent (``EXTERNAL`` for roots). The
    ``chopped`` vertex contributes a single corner owned by ``CHOPPED``.
    """
    out: List[Corner] = []
    for root in roots:
        stack = [(root, EXTERNAL, 0)]
        while stack:
            w, up, j = stack.pop()
            key, label = (tag, w), mobile.label[w]
            if w == chopped:
                out.append((key, CHOPPED, label))
                continue
            kids = mobile.children[w]
            if j < len(kids):
                b = kids[j]
                out.append((key, (tag, b), label))
                stack.append((w, up, j + 1))
                for u in reversed(mobile.children[b]):
                    stack.append((u, (tag, b), 0))
            else:
                out.append((key, up, label))
    return out


def successors(labels: np.ndarray, cyclic: bool) -> np.ndarray:
    """First later position with label one less, ``MISSING`` if none."""
    n = len(labels)
    succ = np.full(n, MISSING, dtype=np.int64)
    nearest: Dict[int, int] = {}
    for i in range((2 * n if cyclic else n) - 1, -1, -1):
        c = i % n
        ell = int(labels[c])
        if i < n:
            succ[c] = nearest.get(ell - 1, MISSING)
        nearest[ell] = c
    return succ


def black_degrees(mobile: Mobile, tag: int) -> Dict[Hashable, int]:
    """Degree of every black vertex of ``mobile``, keyed by ``(tag, id)``."""
    return {
        (tag, b): len(mobile.children[b]) + 1
        for b, color in enumerate(mobile.color)
        if color == BLACK
    }


@dataclass
class _Assembly:
    origin: np.ndarray
    nxt: np.ndarray
    keys: List[Hashable]
    labels: np.ndarray
    succ: np.ndarray
    corner_labels: np.ndarray
    star: int = MISSING
    external: List[int] = field(default_factory=list)


def _assemble(
    corners: Sequence[Corner], degrees: Dict[Hashable, int], cyclic: bool
) -> _Assembly:
    """Half-edge arrays for the successor map of ``corners``.

    Corner ``c`` owns half-edges ``2c`` (towards its successor) and
    ``2c + 1`` (back). Faces are built only for owners whose corners and
    successor chains are all present.
    """
    n = len(corners)
    index: Dict[Hashable, int] = {}
    vid = np.empty(n, dtype=np.int64)
    for c, (key, _, _) in enumerate(corners):
        vid[c] = index.setdefault(key, len(index))
    keys = list(index)
    corner_labels = np.array([ell for _, _, ell in corners], dtype=np.int64)
    vertex_labels = np.empty(len(keys), dtype=np.int64)
    vertex_labels[vid] = corner_labels
    succ = successors(corner_labels, cyclic)

    star = MISSING
    target = np.full(n + 1, MISSING, dtype=np.int64)
    target[:n] = vid
    if cyclic:
        star = len(keys)
        keys.append(STAR_KEY)
        vertex_labels = np.append(vertex_labels, corner_labels.min() - 1)
        succ[succ == MISSING] = n
        target[n] = star

    resolved = succ != MISSING
    origin = np.full(2 * n, MISSING, dtype=np.int64)
    origin[0::2][resolved] = vid[resolved]
    origin[1::2][resolved] = target[succ[resolved]]

    def sector(c: int) -> Optional[List[int]]:
        s = int(succ[c])
        if s == MISSING:
            return None
        d = (c + 1) % n if cyclic else c + 1
        if d == n and not cyclic:
            return None
        chain: List[int] = []
        while d != s:
            if d == MISSING or len(chain) > n:
                return None
            chain.append(2 * d + 1)
            d = int(succ[d])
        return [2 * c] + chain[::-1]

    owned: Dict[Hashable, List[int]] = {}
    for c, (_, owner, _) in enumerate(corners):
        if owner != CHOPPED:
            owned.setdefault(owner, []).append(c)

    nxt = np.full(2 * n, MISSING, dtype=np.int64)
    external: List[int] = []
    for owner, cs in owned.items():
        degree = degrees.get(owner)
        if degree is None:
            raise MalformedForest(f"unknown face owner {owner}")
        if len(cs) > degree:
            raise MalformedForest(f"owner {owner} has {len(cs)} corners")
        if len(cs) < degree:
            continue
        sectors = [sector(c) for c in cs]
        if any(s is None for s in sectors):
            continue
        cycle = [h for s in sectors for h in s]
        if len(cycle) != 2 * degree:
            raise MalformedForest(
                f"face of {owner} has degree {len(cycle)}, expected "
                f"{2 * degree}"
            )
        nxt[cycle] = np.roll(cycle, -1)
        if owner == EXTERNAL:
            external = cycle
    return _Assembly(
        origin=origin,
        nxt=nxt,
        keys=keys,
        labels=vertex_labels,
        succ=succ,
        corner_labels=corner_labels,
        star=star,
        external=external,
    )


def build_pointed_map(
    forest: LabelledForest, rng: Optional[np.random.Generator] = None
) -> PlanarMap:
    """Pointed map with a boundary of length ``2p`` coded by ``forest``.

    The root is the twin of a uniform half-edge of the external face, so
    the external face lies on its right.

    Raises:
        MalformedForest: The forest is not well labelled.
    """
    forest.check()
    rng = rng if rng is not None else np.random.default_rng()
    mob = forest.mobile
    degrees = black_degrees(mob, 0)
    degrees[EXTERNAL] = forest.p
    parts = _assemble(contour(mob, mob.roots), degrees, cyclic=True)
    x = int(parts.external[int(rng.integers(len(parts.external)))])
    pmap = PlanarMap(
        parts.origin,
        parts.nxt,
        parts.keys,
        parts.labels,
        root=twin(x),
        star=parts.star,
        boundary=x,
    )
    logger.debug(
        f"Pointed map: p={forest.p}, V={pmap.n_vertices}, F={pmap.n_faces}"
    )
    return pmap


def build_truncated_infinite_map(
    spine: SpineMobile,
    companions: Sequence[Mobile],
    trust_radius: int,
    rng: Optional[np.random.Generator] = None,
    trust_factor: int = TRUST_FACTOR,
    trust_margin: int = TRUST_MARGIN,
) -> PlanarMap:
    """Region of the infinite map coded by a chopped spine tree.

    The two-sided contour is laid out as the corners right of the spine
    (deep to shallow), the companion trees, the corners left of the
    spine (shallow to deep) and finally the chopped marker. With no
    companions the degree-2 external face is squeezed into the root edge.

    Raises:
        TruncationTooShallow: The chop depth is below
            ``trust_factor * trust_radius + trust_margin`` or a corner
            with label ``>= -trust_radius`` has no successor.
    """
    depth = spine.threshold - 3
    needed = trust_factor * trust_radius + trust_margin
    if depth < needed:
        raise TruncationTooShallow(
            f"chop depth {depth} below {needed} for trust radius "
            f"{trust_radius}"
        )
    rng = rng if rng is not None else np.random.default_rng()
    mob = spine.mobile
    tree = contour(mob, [spine.root], SPINE_TAG, chopped=spine.marker)
    k = next(i for i, c in enumerate(tree) if c[1] == CHOPPED)
    degrees = black_degrees(mob, SPINE_TAG)
    degrees[EXTERNAL] = 1 + len(companions)
    sides: List[Corner] = []
    for tag, comp in enumerate(companions, start=1):
        sides.extend(contour(comp, comp.roots, tag))
        degrees.update(black_degrees(comp, tag))
    corners = tree[k + 1 :] + sides + tree[:k] + [tree[k]]
    parts = _assemble(corners, degrees, cyclic=False)

    open_labels = parts.corner_labels[parts.succ == MISSING]
    if np.any(open_labels >= -trust_radius):
        raise TruncationTooShallow(
            f"corner with label {int(open_labels.max())} has no successor"
        )
    if not parts.external:
        raise TruncationTooShallow("external face is not closed")
    ext = parts.external
    i = int(rng.integers(len(ext)))
    x1 = int(ext[i])
    squeeze = (x1, int(ext[1 - i])) if len(ext) == 2 else None
    return PlanarMap(
        parts.origin,
        parts.nxt,
        parts.keys,
        parts.labels,
        root=twin(x1),
        boundary=x1,
        squeeze=squeeze,
        trust_radius=trust_radius,
    )


@dataclass
class InfiniteMap:
    """Truncated infinite map together with its coding trees."""

    pmap: PlanarMap
    spine: SpineMobile
    companions: List[Mobile]
    depth: int

    @property
    def trust_radius(self) -> int:
        """Certified radius of the underlying map."""
        return self.pmap.trust_radius


def sample_infinite_map(
    data: CriticalData,
    trust_radius: int,
    seed: Union[int, np.random.SeedSequence, None] = None,
    p: int = 1,
    depth: Optional[int] = None,
    trust_factor: int = TRUST_FACTOR,
    trust_margin: int = TRUST_MARGIN,
    node_cap: int = DEFAULT_NODE_CAP,
) -> InfiniteMap:
    """Sample the region of the infinite map with half-perimeter ``p``
    certified up to ``trust_radius``.

    The spine, the companion trees and the root draw from separate
    streams derived from ``seed``, so a deeper ``depth`` with the same
    seed extends the same infinite map.
    """
    if p < 1:
        raise InvalidParameter(f"half-perimeter must be >= 1, got {p}")
    if depth is None:
        depth = trust_factor * trust_radius + trust_margin
    spine_rng, comp_rng, root_rng = spawn_generators(seed, 3)
    spine = sample_spine_mobile(data, depth, spine_rng, node_cap)
    labels = sample_bridge(p, 0, comp_rng)
    companions = [
        sample_mobile(data, comp_rng, int(labels[i]), node_cap)
        for i in range(1, p)
    ]
    pmap = build_truncated_infinite_map(
        spine, companions, trust_radius, root_rng, trust_factor, trust_margin
    )
    logger.debug(
        f"Infinite map: p={p}, R={trust_radius}, depth={depth}, "
        f"V={pmap.n_vertices}, complete faces={pmap.n_faces}"
    )
    return InfiniteMap(pmap, spine, companions, depth)


@dataclass(frozen=True)
class DoublingReport:
    """Outcome of the trust-radius doubling check."""

    radius: int
    depth: int
    passed: bool
    shallow_edges: int
    deep_edges: int
    reason: str = ""


def doubling_check(
    data: CriticalData,
    radius: int,
    seed: Union[int, np.random.SeedSequence, None] = None,
    trust_factor: int = TRUST_FACTOR,
    trust_margin: int = TRUST_MARGIN,
) -> DoublingReport:
    """Compare the hull of ``radius`` built from chop depth ``R'`` and
    from ``2R'`` on the same infinite map."""
    depth = trust_factor * radius + trust_margin
    edges = []
    for d in (depth, 2 * depth):
        sample = sample_infinite_map(
            data, radius, seed, depth=d, trust_factor=trust_factor,
            trust_margin=trust_margin,
        )
        try:
            hull = ball_and_hull(sample.pmap, radius)
        except TrustRadiusExceeded as e:
            return DoublingReport(radius, depth, False, 0, 0, str(e))
        edges.append(edge_multiset(sample.pmap, hull.hull_faces))
    passed = edges[0] == edges[1]
    if not passed:
        logger.warning(
            f"Doubling check failed at R={radius}: {len(edges[0])} vs "
            f"{len(edges[1])} hull edges"
        )
    return DoublingReport(
        radius, depth, passed, len(edges[0]), len(edges[1]),
        "" if passed else "hull edge sets differ",
    )


def tentacle_distance(sample: InfiniteMap, r: int) -> Tuple[int, int]:
    """Largest distance from the root vertex to a white vertex of the
    tree chopped at ``-(r + 3)``, with the label bound ``2 + 3 max|l|``.
    """
    whites = sample.spine.chopped_whites(r)
    mob = sample.spine.mobile
    pmap = sample.pmap
    dist = bfs_distance(pmap, pmap.root_vertex)
    verts = [pmap.vertex_index((SPINE_TAG, w)) for w in whites]
    reach = dist[verts]
    if np.any(reach < 0):
        raise TruncationTooShallow("chopped tree leaves the certified map")
    bound = 2 + 3 * max(abs(mob.label[w]) for w in whites)
    return int(reach.max()), bound
