"""Filled-in peeling explorations.

A ``Submap`` keeps the explored faces of a host map and its hole as a
cyclic list of entries: half-edges whose twin lies in an explored face,
with the hole on their left. Peeling an entry either reveals a new face
(``C``) or, when its own face is already explored, identifies it with its
twin and fills in the finite side (``G``).
"""

import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import (
    Dict,
    FrozenSet,
    Iterable,
    List,
    NamedTuple,
    Optional,
    Set,
    Tuple,
    Union,
)

import numpy as np
import polars as pl
from scipy.sparse import csgraph

from stable_maps.bdg import (
    TRUST_FACTOR,
    TRUST_MARGIN,
    InfiniteMap,
    sample_infinite_map,
)
from stable_maps.config import ALGORITHMS
from stable_maps.disks import DEFAULT_ATTEMPT_CAP, disk_volume
from stable_maps.errors import (
    CertificateExceeded,
    ExplorationError,
    InvalidParameter,
)
from stable_maps.maps import (
    MISSING,
    PlanarMap,
    bfs_distance,
    dual_distance,
    twin,
)
from stable_maps.mobiles import spawn_sequences
from stable_maps.weights import CriticalData

logger = logging.getLogger(__name__)

C = "C"
G_LEFT = "G_left"
G_RIGHT = "G_right"
CERTIFICATE_RETRIES = 3
PEEL_SCHEMA = [
    "replicate",
    "n",
    "p",
    "volume",
    "event_type",
    "event_j_or_k",
    "d_minus",
    "d_plus",
    "H",
    "theta",
]

Seed = Union[int, np.random.SeedSequence, None]


class PeelEvent(NamedTuple):
    """``C`` with the half-degree ``k`` of the new face, or a ``G`` event
    with the half-perimeter ``j`` of the swallowed side."""

    kind: str
    size: int

    def apply(self, p: int) -> int:
        """Half-perimeter after the event."""
        if self.kind == C:
            return p + self.size - 1
        return p - self.size - 1


_FINITE = "finite"
_INFINITE = "infinite"


class _Flood:
    """Breadth-first search over unexplored faces behind some entries."""

    def __init__(self, submap: "Submap", entries: Iterable[int]):
        self.submap = submap
        self.faces: Set[int] = set()
        self.queue: deque = deque()
        self.status: Optional[str] = None
        for e in entries:
            self._visit(int(submap.host.face[e]))

    def _visit(self, f: int) -> None:
        if f == MISSING:
            self.status = _INFINITE
        elif f not in self.submap.explored and f not in self.faces:
            self.faces.add(f)
            self.queue.append(f)

    def step(self) -> Optional[str]:
        """Advance the search by one face; the verdict once known."""
        if self.status is None:
            if not self.queue:
                self.status = _FINITE
            else:
                host = self.submap.host
                f = self.queue.popleft()
                for g in host.face[host.faces[f] ^ 1]:
                    self._visit(int(g))
        return self.status


class Submap:
    """Explored part of ``host`` with one hole.

    Starts from the external face; for a squeezed host this is the root
    edge with half-perimeter 1.
    """

    def __init__(self, host: PlanarMap):
        if host.external == MISSING:
            raise InvalidParameter("host map needs a root face to start from")
        self.host = host
        self.explored: Set[int] = set()
        self.touched: Set[int] = set()
        self.boundary: List[int] = []
        self.entries: Set[int] = set()
        self.on_boundary: Counter = Counter()
        self._explore(host.external)
        cycle = host.faces[host.external]
        self._insert(0, [twin(int(h)) for h in cycle[::-1]])

    @property
    def p(self) -> int:
        """Half-perimeter of the hole."""
        return len(self.boundary) // 2

    @property
    def inner_volume(self) -> int:
        """Explored vertices off the hole boundary."""
        return len(self.touched) - len(self.on_boundary)

    def is_on_boundary(self, v: int) -> bool:
        """Whether vertex ``v`` lies on the hole boundary."""
        return v in self.on_boundary

    def boundary_vertices(self) -> np.ndarray:
        """Vertices of the hole boundary."""
        return np.fromiter(self.on_boundary, dtype=np.int64)

    def _explore(self, f: int) -> None:
        self.explored.add(f)
        self.touched.update(self.host.origin[self.host.faces[f]].tolist())

    def _insert(self, pos: int, hs: List[int]) -> None:
        self.boundary[pos:pos] = hs
        self.entries.update(hs)
        self.on_boundary.update(self.host.origin[hs].tolist())

    def _remove(self, hs: Iterable[int]) -> None:
        for h in hs:
            self.entries.discard(h)
            v = int(self.host.origin[h])
            self.on_boundary[v] -= 1
            if not self.on_boundary[v]:
                del self.on_boundary[v]

    def peel(self, b: int) -> PeelEvent:
        """Reveal what lies behind entry ``b``.

        Raises:
            CertificateExceeded: The exploration reached an incomplete
                part of the host.
        """
        if b not in self.entries:
            raise InvalidParameter(f"half-edge {b} is not on the hole")
        host = self.host
        i = self.boundary.index(b)
        f = int(host.face[b])
        if f == MISSING:
            raise CertificateExceeded(f"face behind {b} is beyond the cut")
        if f not in self.explored:
            cycle = host.faces[f]
            start = int(np.flatnonzero(cycle == b)[0])
            rolled = np.roll(cycle, -start)
            new = [twin(int(h)) for h in rolled[:0:-1]]
            del self.boundary[i]
            self._remove([b])
            self._explore(f)
            self._insert(i, new)
            return PeelEvent(C, len(cycle) // 2)

        j = self.boundary.index(twin(b))
        size = len(self.boundary)
        after = [self.boundary[(i + 1 + t) % size]
                 for t in range((j - i - 1) % size)]
        before = [self.boundary[(j + 1 + t) % size]
                  for t in range((i - j - 1) % size)]
        first_finite, faces = self._finite_side(after, before)
        finite, keep = (after, before) if first_finite else (before, after)
        self._remove([b, twin(b)] + finite)
        for g in faces:
            self._explore(g)
        self.boundary = keep
        return PeelEvent(G_RIGHT if first_finite else G_LEFT, len(finite) // 2)

    def _finite_side(
        self, after: List[int], before: List[int]
    ) -> Tuple[bool, Set[int]]:
        """Flood both sides in turn; the one that runs dry is finite."""
        floods = (_Flood(self, after), _Flood(self, before))
        while True:
            states = [fl.step() for fl in floods]
            if _FINITE in states:
                k = states.index(_FINITE)
                return k == 0, floods[k].faces
            if states[0] == _INFINITE and states[1] == _INFINITE:
                raise CertificateExceeded(
                    "both sides of a gluing reach the cut"
                )


def peel_step_coupled(submap: Submap, edge: int) -> Tuple[PeelEvent, Submap]:
    """Peel ``edge`` of ``submap`` inside its host map."""
    return submap.peel(edge), submap


def peel_step_chain(
    p: int,
    volume: int,
    data: CriticalData,
    rng: np.random.Generator,
    attempt_cap: int = DEFAULT_ATTEMPT_CAP,
) -> Tuple[PeelEvent, int, int]:
    """One step of the perimeter and volume chain.

    A ``G`` event swallowing half-perimeter ``j`` adds the whole vertex
    count of a free disk of perimeter ``2j``.
    """
    kind, size = data.sampler.sample(p, rng)
    event = PeelEvent(kind, size)
    if kind != C:
        volume += disk_volume(size, data, rng, attempt_cap=attempt_cap)
    return event, event.apply(p), volume


@dataclass
class ExplorationTrace:
    """Per-step record of an exploration; row 0 is the initial state."""

    algorithm: str
    mode: str
    n: List[int] = field(default_factory=list)
    p: List[int] = field(default_factory=list)
    volume: List[int] = field(default_factory=list)
    event_type: List[Optional[str]] = field(default_factory=list)
    event_size: List[Optional[int]] = field(default_factory=list)
    d_minus: List[Optional[int]] = field(default_factory=list)
    d_plus: List[Optional[int]] = field(default_factory=list)
    H: List[Optional[int]] = field(default_factory=list)
    theta: List[Optional[int]] = field(default_factory=list)
    snapshots: Dict[int, FrozenSet[int]] = field(default_factory=dict)
    apertures: Dict[int, int] = field(default_factory=dict)
    host: Optional[InfiniteMap] = None
    walk: Optional[object] = None
    trust_radius: Optional[int] = None

    def __len__(self) -> int:
        return len(self.n)

    def append(
        self,
        p: int,
        volume: int,
        event: Optional[PeelEvent] = None,
        d_minus: Optional[int] = None,
        d_plus: Optional[int] = None,
        H: Optional[int] = None,
        theta: Optional[int] = None,
    ) -> None:
        """Record one step."""
        self.n.append(len(self.n))
        self.p.append(p)
        self.volume.append(volume)
        self.event_type.append(event.kind if event else None)
        self.event_size.append(event.size if event else None)
        self.d_minus.append(d_minus)
        self.d_plus.append(d_plus)
        self.H.append(H)
        self.theta.append(theta)

    def to_frame(self, replicate: int = 0) -> pl.DataFrame:
        """Trace as a frame, one row per step."""
        return pl.DataFrame(
            {
                "replicate": [replicate] * len(self.n),
                "n": self.n,
                "p": self.p,
                "volume": self.volume,
                "event_type": self.event_type,
                "event_j_or_k": self.event_size,
                "d_minus": self.d_minus,
                "d_plus": self.d_plus,
                "H": self.H,
                "theta": self.theta,
            },
            schema={
                "replicate": pl.Int64,
                "n": pl.Int64,
                "p": pl.Int64,
                "volume": pl.Int64,
                "event_type": pl.Utf8,
                "event_j_or_k": pl.Int64,
                "d_minus": pl.Int64,
                "d_plus": pl.Int64,
                "H": pl.Int64,
                "theta": pl.Int64,
            },
        )


class Exploration:
    """A ``Submap`` of a certified host together with its trace."""

    def __init__(
        self,
        pmap: PlanarMap,
        algorithm: str = "",
        snapshots: Iterable[int] = (),
    ):
        self.pmap = pmap
        self.submap = Submap(pmap)
        self.dist = bfs_distance(pmap, pmap.root_vertex)
        self.trace = ExplorationTrace(
            algorithm, "coupled", trust_radius=pmap.trust_radius
        )
        self.layer: Optional[int] = None
        self.theta: Optional[int] = None
        self._snapshots = set(snapshots)
        self._record(None)

    @property
    def n(self) -> int:
        """Number of peeling steps so far."""
        return len(self.trace) - 1

    def distances(self) -> Tuple[int, int]:
        """``(D-, D+)`` over the hole boundary.

        Raises:
            CertificateExceeded: A boundary vertex reaches the trust
                radius.
        """
        d = self.dist[self.submap.boundary_vertices()]
        trust = self.pmap.trust_radius
        if np.any(d < 0) or (trust is not None and d.max() >= trust):
            raise CertificateExceeded(
                f"hole boundary reached distance {int(d.max())} with trust "
                f"radius {trust}"
            )
        return int(d.min()), int(d.max())

    def _record(self, event: Optional[PeelEvent]) -> None:
        d_minus, d_plus = self.distances()
        sub = self.submap
        self.trace.append(
            sub.p, sub.inner_volume, event, d_minus, d_plus, self.layer,
            self.theta,
        )
        if self.n in self._snapshots:
            self.trace.snapshots[self.n] = frozenset(sub.explored)
            self.trace.apertures[self.n] = self.boundary_aperture()

    def boundary_aperture(self) -> int:
        """Largest host distance between two vertices of the hole."""
        verts = self.submap.boundary_vertices()
        dist = csgraph.dijkstra(
            self.pmap.adjacency(), directed=False, indices=verts,
            unweighted=True,
        )
        return int(dist[:, verts].max())

    def peel(self, b: int) -> PeelEvent:
        """Peel entry ``b`` and record the step."""
        p = self.submap.p
        event = self.submap.peel(b)
        if event.apply(p) != self.submap.p:
            raise ExplorationError(
                f"perimeter bookkeeping broke on {event}: {p} -> "
                f"{self.submap.p}"
            )
        self._record(event)
        return event


class PeelAlgorithm:
    """Chooses the next entry to peel; randomness is private."""

    name = ""

    def bind(self, exploration: Exploration) -> None:
        """Attach to a fresh exploration."""
        pass

    def next_edge(self, exploration: Exploration) -> int:
        """Entry of the hole to peel next."""
        raise NotImplementedError

    def after_peel(self, exploration: Exploration, edge: int) -> None:
        """React to the step that peeled ``edge``."""
        pass


class UniformPeel(PeelAlgorithm):
    """Uniform edge of the hole boundary."""
    name = "uniform"

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def next_edge(self, exploration: Exploration) -> int:
        """Uniform entry of the hole."""
        boundary = exploration.submap.boundary
        return boundary[int(self.rng.integers(len(boundary)))]


class LayeredDual(PeelAlgorithm):
    """Peel the explored face closest to the root face in the dual,
    scanning from the position of the previous peel so layers complete
    in turn.

    On a squeezed host the first peel reveals the root face, and the
    squeezed external face stands for the root edge at depth 0. Every
    explored face behind the hole then sits at dual depth ``H`` or
    ``H + 1``, with ``H`` held in ``exploration.layer``.
    """

    name = "layered-dual"

    def bind(self, exploration: Exploration) -> None:
        """Depths from the root face."""
        pmap = exploration.pmap
        self.opening: Optional[int] = None
        if pmap.squeeze is not None:
            self.depth = dual_distance(pmap)
            self.depth[pmap.external] = 0
            self.opening = twin(pmap.squeeze[1])
        else:
            self.depth = dual_distance(pmap, pmap.external, squeeze=False)
        self.last = 0

    def layers(self, exploration: Exploration) -> np.ndarray:
        """Dual depth of the explored face behind every entry."""
        pmap = exploration.pmap
        faces = pmap.face[np.asarray(exploration.submap.boundary) ^ 1]
        return self.depth[faces]

    def next_edge(self, exploration: Exploration) -> int:
        """Next entry at the lowest depth, going around the hole."""
        boundary = exploration.submap.boundary
        if self.opening is not None:
            edge, self.opening = self.opening, None
            self.last = boundary.index(edge)
            exploration.layer = 0
            return edge
        depth = self.layers(exploration)
        if np.any(depth < 0):
            raise CertificateExceeded("boundary face outside the dual region")
        start = self.last % len(boundary)
        order = np.roll(np.arange(len(boundary)), -start)
        pos = int(order[np.argmin(depth[order])])
        self.last = pos
        exploration.layer = int(depth[pos])
        return boundary[pos]


def uniform_peel(rng: np.random.Generator) -> UniformPeel:
    """Uniform peeling algorithm."""
    return UniformPeel(rng)


def layered_dual() -> LayeredDual:
    """Layered peeling along dual depth."""
    return LayeredDual()


def walk_primal(rng: np.random.Generator) -> PeelAlgorithm:
    """Peeling driven by a walk on vertices."""
    from stable_maps.walks import PrimalWalk

    return PrimalWalk(rng)


def walk_dual(rng: np.random.Generator) -> PeelAlgorithm:
    """Peeling driven by a walk on faces."""
    from stable_maps.walks import DualWalk

    return DualWalk(rng)


def make_algorithm(name: str, rng: np.random.Generator) -> PeelAlgorithm:
    """Algorithm registered under ``name``."""
    if name == "uniform":
        return uniform_peel(rng)
    if name == "layered-dual":
        return layered_dual()
    if name == "walk-primal":
        return walk_primal(rng)
    if name == "walk-dual":
        return walk_dual(rng)
    raise InvalidParameter(
        f"unknown algorithm {name!r}, expected {ALGORITHMS}"
    )


def initial_trust_radius(n_steps: int, type_a: float) -> int:
    """``max(4, ceil(2 n^(1/(2(a-1)))))``, the typical reach after ``n``
    peeling steps with room to spare."""
    return max(4, math.ceil(2 * n_steps ** (1.0 / (2 * (type_a - 1)))))


def explore_host(
    pmap: PlanarMap,
    algorithm: PeelAlgorithm,
    n_steps: int,
    snapshots: Iterable[int] = (),
) -> ExplorationTrace:
    """Run ``n_steps`` peeling steps of ``algorithm`` on a fixed host."""
    exploration = Exploration(pmap, algorithm.name, snapshots)
    algorithm.bind(exploration)
    while exploration.n < n_steps:
        edge = algorithm.next_edge(exploration)
        exploration.peel(edge)
        algorithm.after_peel(exploration, edge)
    trace = exploration.trace
    trace.walk = getattr(algorithm, "trace", None)
    return trace


def run_exploration(
    data: CriticalData,
    algorithm: str,
    mode: str,
    n_steps: int,
    seed: Seed = None,
    snapshots: Iterable[int] = (),
    trust_radius: Optional[int] = None,
    trust_factor: int = TRUST_FACTOR,
    trust_margin: int = TRUST_MARGIN,
    retries: int = CERTIFICATE_RETRIES,
    attempt_cap: int = DEFAULT_ATTEMPT_CAP,
) -> ExplorationTrace:
    """Run one exploration, deterministic given ``seed``.

    In chain mode only ``(p, volume)`` is simulated. In coupled mode the
    host is regenerated with a doubled trust radius whenever the
    exploration leaves the certified region, at most ``retries`` times.

    Raises:
        CertificateExceeded: Still outside the certified region after
            the last retry.
    """
    if n_steps < 0:
        raise InvalidParameter(f"step count must be >= 0, got {n_steps}")
    host_seed, alg_seed = spawn_sequences(seed, 2)
    if mode == "chain":
        if algorithm.startswith("walk"):
            raise InvalidParameter(f"{algorithm} needs the coupled mode")
        rng = np.random.default_rng(alg_seed)
        trace = ExplorationTrace(algorithm, mode)
        p, volume = 1, 0
        trace.append(p, volume)
        for _ in range(n_steps):
            event, p, volume = peel_step_chain(
                p, volume, data, rng, attempt_cap
            )
            trace.append(p, volume, event)
        return trace
    if mode != "coupled":
        raise InvalidParameter(f"unknown mode {mode!r}")

    radius = trust_radius or initial_trust_radius(n_steps, data.type_a)
    for attempt in range(retries + 1):
        host = sample_infinite_map(
            data, radius, host_seed, trust_factor=trust_factor,
            trust_margin=trust_margin,
        )
        rng = np.random.default_rng(alg_seed)
        try:
            trace = explore_host(
                host.pmap, make_algorithm(algorithm, rng), n_steps, snapshots
            )
        except CertificateExceeded as e:
            logger.warning(
                f"Exploration left trust radius {radius} "
                f"(attempt {attempt + 1}/{retries + 1}): {e}"
            )
            radius *= 2
            continue
        trace.host = host
        return trace
    raise CertificateExceeded(
        f"{algorithm} exploration of {n_steps} steps still uncertified at "
        f"trust radius {radius // 2}"
    )


def aperture_gap(trace: ExplorationTrace) -> pl.DataFrame:
    """``D+ - D-`` next to the boundary aperture at every snapshot."""
    rows = sorted(trace.apertures)
    return pl.DataFrame(
        {
            "n": rows,
            "gap": [trace.d_plus[n] - trace.d_minus[n] for n in rows],
            "aperture": [trace.apertures[n] for n in rows],
        },
        schema={"n": pl.Int64, "gap": pl.Int64, "aperture": pl.Int64},
    )
