"""Simple random walks driving the peeling, with pioneer detection.

The primal walk only moves from vertices whose surrounding faces are all
explored; while it stands on the hole boundary the entry next to it is
peeled. The dual walk crosses uniform edges of its face and peels the
edge whenever the far side is still unexplored.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
import polars as pl

from stable_maps.bdg import InfiniteMap
from stable_maps.errors import (
    CertificateExceeded,
    ExplorationError,
    InvalidParameter,
)
from stable_maps.maps import MISSING, PlanarMap, dual_distance, twin
from stable_maps.mobiles import spawn_generators
from stable_maps.peeling import Exploration, PeelAlgorithm

logger = logging.getLogger(__name__)

MAX_ROTATION = 1 << 20
WALK_SCHEMA = ["replicate", "n", "is_pioneer", "dist", "theta"]

Seed = Union[int, np.random.SeedSequence, None]


@dataclass
class WalkTrace:
    """Positions, traversed half-edges and pioneer flags of a walk.

    ``positions`` are vertices for the primal walk and faces for the
    dual one; ``edges[0]`` is ``MISSING``.
    """

    graph: str
    positions: List[int] = field(default_factory=list)
    edges: List[int] = field(default_factory=list)
    pioneer: List[bool] = field(default_factory=list)
    dist: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.positions)

    def append(self, position: int, edge: int, pioneer: bool, dist: int):
        """Record one step of the walk."""
        self.positions.append(int(position))
        self.edges.append(int(edge))
        self.pioneer.append(bool(pioneer))
        self.dist.append(int(dist))

    @property
    def theta(self) -> int:
        """Number of pioneer steps."""
        return sum(self.pioneer)

    def pioneer_times(self) -> List[int]:
        """Steps at which the walk was a pioneer."""
        return [n for n, flag in enumerate(self.pioneer) if flag]

    def max_pioneer_distance(self) -> np.ndarray:
        """Running ``max_{k <= n}`` distance over pioneer steps."""
        d = np.where(self.pioneer, self.dist, 0)
        return np.maximum.accumulate(d)

    def to_frame(self, replicate: int = 0) -> pl.DataFrame:
        """Trace as a frame with a cumulative pioneer counter."""
        return pl.DataFrame(
            {
                "replicate": [replicate] * len(self),
                "n": list(range(len(self))),
                "is_pioneer": self.pioneer,
                "dist": self.dist,
                "theta": np.cumsum(self.pioneer).tolist(),
            },
            schema={
                "replicate": pl.Int64,
                "n": pl.Int64,
                "is_pioneer": pl.Boolean,
                "dist": pl.Int64,
                "theta": pl.Int64,
            },
        )


class PrimalWalk(PeelAlgorithm):
    """Walk on vertices; peels the entry met first when turning around
    the walker from its arrival half-edge."""

    name = "walk-primal"

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.trace = WalkTrace("primal")
        self.max_steps = MAX_ROTATION

    def bind(self, exploration: Exploration) -> None:
        """Start at the root vertex as a pioneer."""
        pmap = exploration.pmap
        self.position = pmap.root_vertex
        self.arrival = pmap.root
        self._record(exploration, MISSING)

    def _record(self, exploration: Exploration, edge: int) -> None:
        pioneer = exploration.submap.is_on_boundary(self.position)
        d = int(exploration.dist[self.position])
        if d < 0:
            raise CertificateExceeded("walker left the certified map")
        self.trace.append(self.position, edge, pioneer, d)
        exploration.theta = self.trace.theta

    def around(self, pmap: PlanarMap) -> List[int]:
        """Outgoing half-edges of the walker, from the arrival one."""
        out = [self.arrival]
        h = pmap.rotation(self.arrival)
        while h != self.arrival:
            if h == MISSING or len(out) > MAX_ROTATION:
                raise CertificateExceeded(
                    f"rotation around vertex {self.position} is cut"
                )
            out.append(h)
            h = pmap.rotation(h)
        return out

    def edge_at_walker(self, exploration: Exploration) -> Optional[int]:
        """Entry to peel next, ``None`` once the walker is inner."""
        sub = exploration.submap
        if not sub.is_on_boundary(self.position):
            return None
        for h in self.around(exploration.pmap):
            if h in sub.entries:
                return h
            if twin(h) in sub.entries:
                return twin(h)
        raise ExplorationError(
            f"vertex {self.position} is on the hole but has no entry"
        )

    def step(self, exploration: Exploration) -> None:
        """Move to a uniform neighbour."""
        pmap = exploration.pmap
        around = self.around(pmap)
        h = around[int(self.rng.integers(len(around)))]
        self.position = pmap.target(h)
        self.arrival = twin(h)
        self._record(exploration, h)

    def next_edge(self, exploration: Exploration) -> int:
        """Walk until the walker sits on the hole."""
        for _ in range(self.max_steps):
            edge = self.edge_at_walker(exploration)
            if edge is not None:
                return edge
            self.step(exploration)
        raise ExplorationError("primal walk stopped triggering peeling")


class DualWalk(PeelAlgorithm):
    """Walk on faces of the squeezed map.

    The first peeling step reveals the root face, where the walk starts.
    """

    name = "walk-dual"

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.trace = WalkTrace("dual")
        self.max_steps = MAX_ROTATION
        self.pending = MISSING

    def bind(self, exploration: Exploration) -> None:
        """Start from the root face."""
        pmap = exploration.pmap
        if pmap.squeeze is None:
            raise InvalidParameter("dual walk needs a squeezed root edge")
        x1, x2 = pmap.squeeze
        self.crossing = {twin(x1): twin(x2), twin(x2): twin(x1)}
        self.depth = dual_distance(pmap, pmap.root_face)
        exploration.peel(twin(x2))
        self.face = pmap.root_face
        self._record(exploration, twin(x2), True)

    def _record(self, exploration: Exploration, edge: int, pioneer: bool):
        d = int(self.depth[self.face])
        if d < 0:
            raise CertificateExceeded("walker left the certified dual")
        self.trace.append(self.face, edge, pioneer, d)
        exploration.theta = self.trace.theta

    def cross(self, exploration: Exploration) -> int:
        """Pick a uniform side of the current face; return the half-edge
        on the far side."""
        cycle = exploration.pmap.faces[self.face]
        g = int(cycle[int(self.rng.integers(len(cycle)))])
        return self.crossing.get(g, twin(g))

    def move(self, exploration: Exploration, b: int, pioneer: bool) -> None:
        """Move across ``b`` into the face beyond it."""
        f = int(exploration.pmap.face[b])
        if f == MISSING:
            raise CertificateExceeded("dual walk crossed into the cut")
        self.face = f
        self._record(exploration, b, pioneer)

    def next_edge(self, exploration: Exploration) -> int:
        """Walk until a crossing leads into the hole."""
        for _ in range(self.max_steps):
            b = self.cross(exploration)
            if b in exploration.submap.entries:
                self.pending = b
                return b
            self.move(exploration, b, False)
        raise ExplorationError("dual walk stopped triggering peeling")

    def after_peel(self, exploration: Exploration, edge: int) -> None:
        """Clear the pending crossing once peeled."""
        if edge == self.pending:
            self.pending = MISSING
            self.move(exploration, edge, True)


def _host_map(host: Union[InfiniteMap, PlanarMap]) -> PlanarMap:
    return host.pmap if isinstance(host, InfiniteMap) else host


def walk_with_pioneers_primal(
    host: Union[InfiniteMap, PlanarMap], steps: int, seed: Seed = None
) -> WalkTrace:
    """Primal walk of ``steps`` steps coupled to the peeling.

    A step is a pioneer step when the walker arrives on the hole
    boundary; step 0 always is.

    Raises:
        CertificateExceeded: The walk or its peeling left the certified
            region.
    """
    (rng,) = spawn_generators(seed, 1)
    walk = PrimalWalk(rng)
    exploration = Exploration(_host_map(host), walk.name)
    walk.bind(exploration)
    while len(walk.trace) <= steps:
        edge = walk.edge_at_walker(exploration)
        if edge is None:
            walk.step(exploration)
        else:
            exploration.peel(edge)
    logger.debug(
        f"Primal walk: {steps} steps, theta={walk.trace.theta}, "
        f"{exploration.n} peeling steps"
    )
    return walk.trace


def walk_with_pioneers_dual(
    host: Union[InfiniteMap, PlanarMap], steps: int, seed: Seed = None
) -> WalkTrace:
    """Dual walk of ``steps`` steps; a step is a pioneer edge when it
    triggers a peeling step.

    Raises:
        CertificateExceeded: The walk or its peeling left the certified
            region.
    """
    (rng,) = spawn_generators(seed, 1)
    walk = DualWalk(rng)
    exploration = Exploration(_host_map(host), walk.name)
    walk.bind(exploration)
    while len(walk.trace) <= steps:
        b = walk.cross(exploration)
        pioneer = b in exploration.submap.entries
        if pioneer:
            exploration.peel(b)
        walk.move(exploration, b, pioneer)
    logger.debug(
        f"Dual walk: {steps} steps, theta={walk.trace.theta}, "
        f"{exploration.n} peeling steps"
    )
    return walk.trace


def pioneers_within(trace: WalkTrace, r: int) -> int:
    """Number of pioneer steps at distance at most ``r``."""
    return sum(
        1 for flag, d in zip(trace.pioneer, trace.dist) if flag and d <= r
    )
