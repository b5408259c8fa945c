"""Boltzmann maps with a boundary: pointed and free disks."""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Union

import numpy as np

from stable_maps.bdg import build_pointed_map
from stable_maps.errors import InvalidParameter, SamplerStall
from stable_maps.maps import PlanarMap, ball_and_hull, twin
from stable_maps.mobiles import (
    DEFAULT_NODE_CAP,
    LabelledForest,
    sample_forest,
    spawn_generators,
)
from stable_maps.weights import CriticalData, DiscreteLaw

logger = logging.getLogger(__name__)

DEFAULT_ATTEMPT_CAP = 10_000
MAX_CHUNK = 1 << 20

Seed = Union[int, np.random.SeedSequence, None]


@dataclass
class DiskSample:
    """A disk of perimeter ``2p`` and how it was obtained."""

    pmap: PlanarMap
    p: int
    pointed: bool
    attempts: int = 1

    @property
    def vertex_count(self) -> int:
        """Vertices of the disk, boundary included."""
        return self.pmap.n_vertices

    @property
    def inner_vertex_count(self) -> int:
        """Vertices off the boundary."""
        return self.pmap.n_vertices - len(self.pmap.boundary_vertices())


def _forest_vertices(forest: LabelledForest) -> int:
    return forest.mobile.n_white + 1


def sample_pointed_disk(
    p: int,
    data: CriticalData,
    seed: Seed = None,
    node_cap: int = DEFAULT_NODE_CAP,
) -> DiskSample:
    """Pointed Boltzmann disk with perimeter ``2p``."""
    if p < 1:
        raise InvalidParameter(f"half-perimeter must be >= 1, got {p}")
    tree_rng, root_rng = spawn_generators(seed, 2)
    forest = sample_forest(data, p, tree_rng, node_cap)
    return DiskSample(build_pointed_map(forest, root_rng), p, pointed=True)


def sample_free_disk(
    p: int,
    data: CriticalData,
    seed: Seed = None,
    attempt_cap: int = DEFAULT_ATTEMPT_CAP,
    node_cap: int = DEFAULT_NODE_CAP,
) -> DiskSample:
    """Free Boltzmann disk by rejection from the pointed law.

    A pointed disk with ``V`` vertices is kept with probability
    ``(p + 1) / V``; every disk of perimeter ``2p`` has ``V >= p + 1``.

    Raises:
        SamplerStall: No acceptance within ``attempt_cap`` draws.
    """
    if p < 1:
        raise InvalidParameter(f"half-perimeter must be >= 1, got {p}")
    tree_rng, root_rng = spawn_generators(seed, 2)
    for attempt in range(1, attempt_cap + 1):
        forest = sample_forest(data, p, tree_rng, node_cap)
        if tree_rng.random() * _forest_vertices(forest) <= p + 1:
            logger.debug(f"Free disk p={p} accepted after {attempt} draws")
            pmap = build_pointed_map(forest, root_rng)
            return DiskSample(pmap, p, pointed=False, attempts=attempt)
    raise SamplerStall(f"free disk p={p}", attempt_cap)


def reroot_along_boundary(
    pmap: PlanarMap, rng: np.random.Generator
) -> PlanarMap:
    """Same map rooted at a uniform edge of its boundary."""
    ext = pmap.faces[pmap.external]
    x = int(ext[int(rng.integers(len(ext)))])
    return PlanarMap(
        pmap.origin,
        pmap.nxt,
        pmap.vertex_keys,
        pmap.labels,
        root=twin(x),
        star=pmap.star,
        boundary=x,
    )


def lukasiewicz_hitting_time(
    law: DiscreteLaw,
    j: int,
    rng: np.random.Generator,
    cap: Optional[float] = None,
) -> Optional[int]:
    """First time a walk with steps ``law - 1`` reaches ``-j``.

    Returns ``None`` once the time passes ``cap`` without a hit.
    """
    position, elapsed = 0, 0
    chunk = max(64, 2 * j)
    while True:
        walk = position + np.cumsum(law.sample(rng, size=chunk) - 1)
        hit = np.flatnonzero(walk <= -j)
        if len(hit):
            return elapsed + int(hit[0]) + 1
        elapsed += chunk
        position = int(walk[-1])
        if cap is not None and elapsed >= cap:
            return None
        chunk = min(2 * chunk, MAX_CHUNK)


def disk_volume(
    p: int,
    data: CriticalData,
    rng: np.random.Generator,
    free: bool = True,
    attempt_cap: int = DEFAULT_ATTEMPT_CAP,
    node_cap: int = DEFAULT_NODE_CAP,
) -> int:
    """Vertex count of a disk of perimeter ``2p`` without building it.

    The white population of ``p`` mobiles is the hitting time of ``-p``
    by the white Lukasiewicz walk. A zero perimeter closes onto a single
    vertex. Free disks use the size-bias rejection with the walk stopped
    as soon as acceptance is impossible.

    Raises:
        SamplerStall: A walk exceeded ``node_cap`` or no free disk was
            accepted within ``attempt_cap`` draws.
    """
    if p < 0:
        raise InvalidParameter(f"half-perimeter must be >= 0, got {p}")
    if p == 0:
        return 1
    law = data.mu_tilde
    if not free:
        t = lukasiewicz_hitting_time(law, p, rng, cap=node_cap)
        if t is None:
            raise SamplerStall(f"disk volume p={p}", node_cap)
        return t + 1
    for _ in range(attempt_cap):
        limit = (p + 1) / (1.0 - rng.random())
        t = lukasiewicz_hitting_time(law, p, rng, cap=min(limit, node_cap))
        if t is not None and t + 1 <= limit:
            return t + 1
    raise SamplerStall(f"free disk volume p={p}", attempt_cap)


@dataclass(frozen=True)
class BallFrontier:
    """Quantiles of ``|Ball(M, r)| / r**(2a - 1)`` in deep free disks.

    ``frontier[c]`` is the largest ``lam`` with
    ``P(|Ball| > lam r**(2a - 1)) >= c`` empirically.
    """

    p: int
    r: int
    volumes: np.ndarray
    frontier: Dict[float, float]


def ball_volume_frontier(
    p: int,
    r: int,
    data: CriticalData,
    replicates: int,
    seed: Seed = None,
    levels: Sequence[float] = (0.05, 0.1, 0.25, 0.5),
    attempt_cap: int = DEFAULT_ATTEMPT_CAP,
) -> BallFrontier:
    """Ball volumes around the root of free disks of perimeter ``2p``."""
    if replicates < 1:
        raise InvalidParameter("at least one replicate is required")
    seeds = np.random.SeedSequence(seed).spawn(replicates)
    volumes = np.empty(replicates, dtype=np.int64)
    for i, s in enumerate(seeds):
        disk = sample_free_disk(p, data, s, attempt_cap)
        volumes[i] = ball_and_hull(disk.pmap, r).ball_vertices
    scaled = volumes / float(r) ** (2 * data.type_a - 1)
    frontier = {
        float(c): float(np.quantile(scaled, 1.0 - c, method="lower"))
        for c in levels
    }
    logger.info(f"Ball frontier p={p}, r={r}: {frontier}")
    return BallFrontier(p, r, volumes, frontier)
