"""Labelled two-type mobiles, forests and the spine tree.

White vertices carry integer labels. Around every black vertex the labels
of its white neighbours, read from the parent and back to it, form a
bridge whose increments are at least -1.
"""

import logging
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from stable_maps.errors import (
    InvalidParameter,
    MalformedForest,
    SamplerStall,
    ThresholdTooSmall,
)
from stable_maps.weights import CriticalData

logger = logging.getLogger(__name__)

WHITE = 0
BLACK = 1
NO_PARENT = -1
REJECTION_MAX = 64
BRIDGE_ATTEMPT_CAP = 10**6
DEFAULT_NODE_CAP = 10**8
LABEL_LIMIT = 2**31 - 1

_TOKEN = re.compile(r"-?\d+|[\[\]()]")


def spawn_sequences(
    seed: Union[int, np.random.SeedSequence, None], n: int
) -> List[np.random.SeedSequence]:
    """``n`` independent children of ``seed``.

    A ``SeedSequence`` argument is copied first so repeated calls with the
    same object yield the same children.
    """
    if isinstance(seed, np.random.SeedSequence):
        base = np.random.SeedSequence(
            seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size
        )
    else:
        base = np.random.SeedSequence(seed)
    return base.spawn(n)


def spawn_generators(
    seed: Union[int, np.random.SeedSequence, None], n: int
) -> List[np.random.Generator]:
    """One generator per spawned child of ``seed``."""
    return [np.random.default_rng(s) for s in spawn_sequences(seed, n)]


def sample_bridge(
    k: int, shift: int = 0, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Uniform label sequence of length ``k + 1`` starting and ending at
    ``shift`` with increments in ``{-1, 0, 1, ...}``.

    Increments are i.i.d. ``P(xi = m) = 2**(-2-m)`` conditioned on summing
    to zero. Rejection is used up to ``REJECTION_MAX``; longer bridges are
    drawn as uniform weak compositions of ``k`` into ``k`` parts, which is
    the same law.

    Raises:
        SamplerStall: Rejection exceeded ``BRIDGE_ATTEMPT_CAP`` attempts.
    """
    if k < 1:
        raise InvalidParameter(f"bridge length must be >= 1, got {k}")
    rng = rng if rng is not None else np.random.default_rng()
    if k == 1:
        return np.array([shift, shift], dtype=np.int64)
    if k <= REJECTION_MAX:
        for _ in range(BRIDGE_ATTEMPT_CAP):
            xi = rng.geometric(0.5, size=k) - 2
            if xi.sum() == 0:
                break
        else:
            raise SamplerStall("bridge rejection", BRIDGE_ATTEMPT_CAP)
    else:
        bars = np.sort(rng.choice(2 * k - 1, size=k - 1, replace=False))
        edges = np.concatenate([[-1], bars, [2 * k - 1]])
        xi = np.diff(edges) - 2
    return shift + np.concatenate([[0], np.cumsum(xi)]).astype(np.int64)


class Mobile:
    """Arena-backed labelled two-type plane forest.

    Node ids index parallel lists. ``roots`` lists the white roots in
    order; children are kept in planar order.
    """

    def __init__(self):
        self.color: List[int] = []
        self.parent: List[int] = []
        self.children: List[List[int]] = []
        self.label: List[int] = []
        self.roots: List[int] = []

    def __len__(self) -> int:
        return len(self.color)

    def add(self, color: int, parent: int = NO_PARENT, label: int = 0) -> int:
        """Append a node and link it to ``parent``; returns its id."""
        if abs(label) > LABEL_LIMIT:
            raise MalformedForest(f"label {label} overflows 32 bits")
        node = len(self.color)
        self.color.append(color)
        self.parent.append(parent)
        self.children.append([])
        self.label.append(int(label) if color == WHITE else 0)
        if parent == NO_PARENT:
            if color != WHITE:
                raise MalformedForest("roots must be white")
            self.roots.append(node)
        else:
            if self.color[parent] == color:
                raise MalformedForest("colours must alternate")
            self.children[parent].append(node)
        return node

    @property
    def n_white(self) -> int:
        """Number of white vertices."""
        return len(self.color) - sum(self.color)

    def preorder(self, roots: Optional[Sequence[int]] = None) -> Iterator[int]:
        """Depth-first preorder over all nodes below ``roots``."""
        roots = self.roots if roots is None else roots
        stack = list(reversed(roots))
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(self.children[node]))

    def white_preorder(
        self, roots: Optional[Sequence[int]] = None
    ) -> List[int]:
        """White vertices in depth-first order."""
        return [v for v in self.preorder(roots) if self.color[v] == WHITE]

    def subtree_whites(self, node: int) -> int:
        """White vertices in the subtree of ``node``."""
        return sum(1 for v in self.preorder([node]) if self.color[v] == WHITE)

    def grandchildren(self, white: int) -> int:
        """White grandchildren of ``white``."""
        return sum(len(self.children[b]) for b in self.children[white])

    def check_bridges(self) -> None:
        """Assert the bridge condition around every black vertex.

        Raises:
            MalformedForest: Some black vertex violates it.
        """
        for node, color in enumerate(self.color):
            if color != BLACK:
                continue
            up = self.label[self.parent[node]]
            seq = [up] + [self.label[u] for u in self.children[node]] + [up]
            if min(np.diff(seq)) < -1:
                raise MalformedForest(
                    f"labels {seq} around black node {node} drop by > 1"
                )

    def to_text(self) -> str:
        """Compact form, e.g. ``0[(1 0)()]``; roots separated by spaces."""
        out: List[str] = []
        for i, root in enumerate(self.roots):
            if i:
                out.append(" ")
            stack: List[Union[int, str]] = [root]
            while stack:
                item = stack.pop()
                if isinstance(item, str):
                    out.append(item)
                    continue
                kids = self.children[item]
                if self.color[item] == WHITE:
                    out.append(str(self.label[item]))
                    if kids:
                        out.append("[")
                        stack.append("]")
                        stack.extend(reversed(kids))
                else:
                    out.append("(")
                    stack.append(")")
                    for j, kid in enumerate(reversed(kids)):
                        stack.append(kid)
                        if j < len(kids) - 1:
                            stack.append(" ")
        return "".join(out)

    @classmethod
    def from_text(cls, text: str) -> "Mobile":
        """Parse the format written by ``to_text``.

        Raises:
            MalformedForest: Unbalanced or misplaced brackets.
        """
        mobile = cls()
        stack: List[int] = []
        last_white = NO_PARENT
        for token in _TOKEN.findall(text):
            if token == "[":
                if last_white == NO_PARENT:
                    raise MalformedForest("'[' must follow a white label")
                stack.append(last_white)
            elif token == "]":
                if not stack or mobile.color[stack[-1]] != WHITE:
                    raise MalformedForest("unbalanced ']'")
                stack.pop()
            elif token == "(":
                if not stack or mobile.color[stack[-1]] != WHITE:
                    raise MalformedForest("'(' outside a white vertex")
                stack.append(mobile.add(BLACK, stack[-1]))
            elif token == ")":
                if not stack or mobile.color[stack[-1]] != BLACK:
                    raise MalformedForest("unbalanced ')'")
                stack.pop()
            else:
                if stack and mobile.color[stack[-1]] == WHITE:
                    raise MalformedForest("white label directly inside '['")
                parent = stack[-1] if stack else NO_PARENT
                last_white = mobile.add(WHITE, parent, int(token))
        if stack:
            raise MalformedForest("unterminated mobile text")
        return mobile


def mobile_from_text(text: str) -> Mobile:
    """Parse the text format of :class:`Mobile`."""
    return Mobile.from_text(text)


@dataclass
class LabelledForest:
    """Finite mobiles ``t_1 .. t_p`` sharing one arena.

    The cyclic sequence of root labels must itself be a bridge.
    """

    mobile: Mobile

    @property
    def p(self) -> int:
        """Number of trees."""
        return len(self.mobile.roots)

    @property
    def root_labels(self) -> List[int]:
        """Labels of the tree roots, in order."""
        return [self.mobile.label[r] for r in self.mobile.roots]

    def check(self) -> None:
        """Validate both bridge conditions.

        Raises:
            MalformedForest: A condition fails.
        """
        if self.p == 0:
            raise MalformedForest("empty forest")
        labels = self.root_labels
        cyclic = labels + labels[:1]
        if min(np.diff(cyclic), default=0) < -1:
            raise MalformedForest(f"root labels {labels} are not a bridge")
        self.mobile.check_bridges()


def _grow(
    mobile: Mobile,
    roots: Sequence[int],
    data: CriticalData,
    rng: np.random.Generator,
    node_cap: int,
) -> None:
    """Expand the given white leaves into full Galton-Watson subtrees."""
    queue = deque(roots)
    while queue:
        w = queue.popleft()
        for _ in range(data.mu_white.sample(rng)):
            b = mobile.add(BLACK, w)
            k = data.mu_black.sample(rng)
            if k:
                labels = sample_bridge(k + 1, mobile.label[w], rng)
                for value in labels[1:-1]:
                    queue.append(mobile.add(WHITE, b, int(value)))
        if len(mobile) > node_cap:
            raise SamplerStall("mobile", node_cap, len(mobile))


def sample_mobile(
    data: CriticalData,
    rng: np.random.Generator,
    root_label: int = 0,
    node_cap: int = DEFAULT_NODE_CAP,
) -> Mobile:
    """Alternating two-type Galton-Watson tree with uniform labels.

    Whites reproduce by ``mu_white``, blacks by ``mu_black``; labels
    around each black vertex are a shifted uniform bridge.

    Raises:
        SamplerStall: More than ``node_cap`` nodes.
    """
    mobile = Mobile()
    root = mobile.add(WHITE, NO_PARENT, root_label)
    _grow(mobile, [root], data, rng, node_cap)
    logger.debug(f"Sampled mobile with {mobile.n_white} white vertices")
    return mobile


def sample_forest(
    data: CriticalData,
    p: int,
    rng: np.random.Generator,
    node_cap: int = DEFAULT_NODE_CAP,
) -> LabelledForest:
    """``p`` independent mobiles whose root labels form a bridge of
    ``p`` increments starting at 0."""
    if p < 1:
        raise InvalidParameter(f"forest size must be >= 1, got {p}")
    labels = sample_bridge(p, 0, rng)
    mobile = Mobile()
    roots = [mobile.add(WHITE, NO_PARENT, int(v)) for v in labels[:-1]]
    for root in roots:
        _grow(mobile, [root], data, rng, node_cap)
    return LabelledForest(mobile)


@dataclass
class SpineMobile:
    """Truncation of the tree conditioned to survive.

    Attributes:
        mobile: Arena holding the spine and every grafted subtree.
        spine_whites: ``s0, s1, ...`` down to and including the marker.
        spine_blacks: Black spine vertices, one per non-marker white.
        marker: Id of the first spine white with label ``< -threshold``;
            it is kept childless.
        threshold: Chop threshold, ``r + 3`` for ``T_r``.
    """

    mobile: Mobile
    spine_whites: List[int] = field(default_factory=list)
    spine_blacks: List[int] = field(default_factory=list)
    marker: int = NO_PARENT
    threshold: int = 0

    @property
    def root(self) -> int:
        """First white vertex of the spine."""
        return self.spine_whites[0]

    def spine_labels(self) -> List[int]:
        """Labels along the spine."""
        return [self.mobile.label[w] for w in self.spine_whites]

    def chopped_whites(self, r: int) -> List[int]:
        """White vertices of the tree chopped at ``-(r + 3)``.

        Node ids are allocated level by level, so the chopped tree is the
        id prefix ending before the first child of its marker.

        Raises:
            ThresholdTooSmall: This sample is chopped above ``-(r + 3)``.
        """
        if r + 3 > self.threshold:
            raise ThresholdTooSmall(
                f"spine chopped at -{self.threshold}, cannot chop at -{r + 3}"
            )
        mob = self.mobile
        marker = next(w for w in self.spine_whites if mob.label[w] < -(r + 3))
        kids = mob.children[marker]
        limit = kids[0] if kids else len(mob)
        return [v for v in range(limit) if mob.color[v] == WHITE]

    def grafted_populations(self) -> Tuple[int, int]:
        """White populations grafted left and right of the spine."""
        mob = self.mobile
        on_spine = set(self.spine_whites) | set(self.spine_blacks)
        left = right = 0
        for node in self.spine_whites[:-1] + self.spine_blacks:
            kids = mob.children[node]
            nxt = [i for i, v in enumerate(kids) if v in on_spine]
            if not nxt:
                continue
            cut = nxt[0]
            for v in kids[:cut]:
                left += mob.subtree_whites(v)
            for v in kids[cut + 1 :]:
                right += mob.subtree_whites(v)
        return left, right


def sample_spine_mobile(
    data: CriticalData,
    r: int,
    rng: np.random.Generator,
    node_cap: int = DEFAULT_NODE_CAP,
) -> SpineMobile:
    """Grow the spine tree level by level until its label drops below
    ``-(r + 3)``.

    Spine vertices reproduce by the size-biased laws and the spine child
    is uniform among the offspring; every other subtree is grown to
    completion before the next spine level. Randomness is consumed in
    this fixed order, so a deeper threshold extends a shallower sample.

    Raises:
        SamplerStall: More than ``node_cap`` nodes.
    """
    if r < 0:
        raise InvalidParameter(f"threshold radius must be >= 0, got {r}")
    threshold = r + 3
    mobile = Mobile()
    spine = SpineMobile(mobile, threshold=threshold)
    current = mobile.add(WHITE, NO_PARENT, 0)
    spine.spine_whites.append(current)
    while mobile.label[current] >= -threshold:
        g = data.mu_white.sample_size_biased(rng)
        spine_black = int(rng.integers(g))
        next_white = NO_PARENT
        off_spine: List[int] = []
        for i in range(g):
            b = mobile.add(BLACK, current)
            if i == spine_black:
                k = data.mu_black.sample_size_biased(rng)
                pick = int(rng.integers(k))
                spine.spine_blacks.append(b)
            else:
                k = data.mu_black.sample(rng)
                pick = -1
            if k == 0:
                continue
            labels = sample_bridge(k + 1, mobile.label[current], rng)
            for j, value in enumerate(labels[1:-1]):
                u = mobile.add(WHITE, b, int(value))
                if j == pick:
                    next_white = u
                else:
                    off_spine.append(u)
        _grow(mobile, off_spine, data, rng, node_cap)
        current = next_white
        spine.spine_whites.append(current)
        if len(mobile) > node_cap:
            raise SamplerStall("spine mobile", node_cap, len(mobile))
    spine.marker = current
    logger.debug(
        f"Spine mobile: threshold={threshold}, "
        f"depth={len(spine.spine_blacks)}, nodes={len(mobile)}"
    )
    return spine


def sigma_r(spine: SpineMobile, r: int) -> Tuple[int, int]:
    """Exit index of the label process below ``-r`` along the spine.

    Returns the preorder index among white vertices of the first spine
    white with label ``< -r``, and the largest ``|label|`` seen up to it.

    Raises:
        ThresholdTooSmall: The spine was chopped before that vertex.
    """
    if spine.threshold < r:
        raise ThresholdTooSmall(
            f"spine chopped at -{spine.threshold}, cannot reach -{r}"
        )
    mob = spine.mobile
    target = next(
        (w for w in spine.spine_whites if mob.label[w] < -r), NO_PARENT
    )
    if target == NO_PARENT:
        raise ThresholdTooSmall(f"no spine label below -{r}")
    index = 0
    largest = 0
    for node in mob.preorder([spine.root]):
        if mob.color[node] != WHITE:
            continue
        largest = max(largest, abs(mob.label[node]))
        if node == target:
            return index, largest
        index += 1
    raise ThresholdTooSmall("marker not reached in preorder")


def coding_walks(
    forest: Union[LabelledForest, Mobile]
) -> Tuple[np.ndarray, np.ndarray]:
    """White Lukasiewicz walk and label process of a finite forest.

    ``S[i+1] - S[i]`` is the number of white grandchildren of the i-th
    white vertex in preorder minus one; ``L[i]`` is its label.
    """
    mobile = forest.mobile if isinstance(forest, LabelledForest) else forest
    whites = mobile.white_preorder()
    steps = np.array([mobile.grandchildren(w) - 1 for w in whites],
                     dtype=np.int64)
    walk = np.concatenate([[0], np.cumsum(steps)])
    labels = np.array([mobile.label[w] for w in whites], dtype=np.int64)
    return walk, labels
