"""
Decomposer - partial tour maintenance, sub-problem generation and merging.

The partial solution is always a closed cycle over the visited nodes. A
sub-problem is a set of new (unvisited) nodes plus a contiguous fragment of
the cycle; its solution is an open path between the fragment's extremes that
replaces the fragment in place.
"""

from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from .core import OpenPath, Tour, TourValidationError, TspInstance, euclidean, path_length
from .spatial import KnnGraph, VisitationGrid, VisitMask, nearest_unvisited_k

logger = logging.getLogger(__name__)


class PartialTour:
    """
    Closed cycle over the visited subset with O(1) predecessor/successor lookup.

    Single-owner mutable state: merges update it in place.
    """

    def __init__(self, instance: TspInstance):
        self.instance = instance
        n = instance.n
        self.succ = np.full(n, -1, dtype=np.int64)
        self.pred = np.full(n, -1, dtype=np.int64)
        self.grid = VisitationGrid(instance)
        self.size = 0
        self.length = 0.0

    @classmethod
    def from_cycle(cls, instance: TspInstance, cycle: Sequence[int]) -> "PartialTour":
        """Build a partial tour from an explicit cyclic order."""
        tour = cls(instance)
        nodes = [int(v) for v in cycle]
        if len(set(nodes)) != len(nodes) or len(nodes) < 2:
            raise TourValidationError("a partial tour needs at least 2 distinct nodes")
        for a, b in zip(nodes, nodes[1:] + nodes[:1]):
            tour.succ[a] = b
            tour.pred[b] = a
        for node in nodes:
            tour.grid.mark_visited(node)
        tour.size = len(nodes)
        tour.length = tour.recompute_length()
        return tour

    @property
    def mask(self) -> VisitMask:
        return self.grid.visited

    @property
    def complete(self) -> bool:
        return self.size == self.instance.n

    def __len__(self) -> int:
        return self.size

    def __contains__(self, node: int) -> bool:
        return node in self.grid.visited

    def order(self, start: Optional[int] = None) -> np.ndarray:
        """Walk the cycle from `start` (default: the depot, else any member)."""
        if self.size == 0:
            return np.empty(0, dtype=np.int64)
        if start is None:
            start = self.instance.depot if self.instance.depot in self else int(
                np.flatnonzero(self.mask.bits)[0]
            )
        out = np.empty(self.size, dtype=np.int64)
        node = start
        for i in range(self.size):
            out[i] = node
            node = int(self.succ[node])
        return out

    def recompute_length(self) -> float:
        """Length of the closed cycle computed from scratch."""
        order = self.order()
        pts = self.instance.nodes[order]
        return float(np.sum(euclidean(pts, np.roll(pts, -1, axis=0))))

    def is_single_cycle(self) -> bool:
        """Walk succ from a member and check it returns after exactly `size` steps."""
        if self.size == 0:
            return True
        members = np.flatnonzero(self.mask.bits)
        if members.size != self.size:
            return False
        start = int(members[0])
        node = start
        seen = 0
        for _ in range(self.size):
            nxt = int(self.succ[node])
            if nxt < 0 or self.pred[nxt] != node or nxt not in self:
                return False
            node = nxt
            seen += 1
            if node == start:
                break
        return node == start and seen == self.size

    def to_tour(self) -> Tour:
        if not self.complete:
            raise TourValidationError(f"partial tour covers {self.size}/{self.instance.n} nodes")
        return Tour.from_sequence(self.order(self.instance.depot))

    def copy(self) -> "PartialTour":
        clone = PartialTour.__new__(PartialTour)
        clone.instance = self.instance
        clone.succ = self.succ.copy()
        clone.pred = self.pred.copy()
        clone.grid = self.grid.copy()
        clone.size = self.size
        clone.length = self.length
        return clone


@dataclass(frozen=True)
class SubProblem:
    """
    Open-loop TSP handed to the lower level.

    Attributes:
        nodes: New nodes followed by the fragment nodes
        source: First fragment node
        target: Last fragment node
        fragment: Ordered visited fragment (along tour orientation)
        new_nodes: Unvisited nodes added by this sub-problem
    """

    nodes: Tuple[int, ...]
    source: int
    target: int
    fragment: Tuple[int, ...]
    new_nodes: Tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.nodes)


def init_tour(instance: TspInstance, knn: Optional[KnnGraph] = None) -> PartialTour:
    """
    Start from the depot and its nearest node as a degenerate 2-cycle.

    Args:
        instance: Instance being solved
        knn: Optional k-NN graph (its first neighbor is the nearest node)

    Returns:
        PartialTour of length 2 * cost(depot, nearest)
    """
    depot = instance.depot
    if knn is not None:
        nearest = int(knn[depot][0])
    else:
        dist = instance.distances_from(depot)
        dist[depot] = np.inf
        nearest = int(np.argmin(dist))
    return PartialTour.from_cycle(instance, [depot, nearest])


def select_fragment(tour: PartialTour, v_b: int, old_length: int) -> List[int]:
    """
    Contiguous segment of the cycle centred on v_b.

    Takes floor((L - 1) / 2) predecessors of v_b and the rest after it, where
    L = min(max(old_length, 2), len(tour)).
    """
    if v_b not in tour:
        raise ValueError(f"node {v_b} is not on the partial tour")
    length = min(max(int(old_length), 2), tour.size)
    start = v_b
    for _ in range((length - 1) // 2):
        start = int(tour.pred[start])
    fragment = [start]
    node = start
    for _ in range(length - 1):
        node = int(tour.succ[node])
        fragment.append(node)
    return fragment


def generate_subproblem(
    knn: KnnGraph,
    tour: PartialTour,
    coord_pred: Tuple[float, float],
    sub_length: int,
    max_num: int,
    use_knn: bool = True,
    use_fragment: bool = True,
) -> SubProblem:
    """
    Build the next sub-problem around the upper-level action.

    Args:
        knn: k-NN graph of the instance
        tour: Current partial tour
        coord_pred: Action point in the unit square
        sub_length: Maximum sub-problem size
        max_num: Maximum number of new nodes
        use_knn: Expand by BFS over the k-NN graph (else take nearest unvisited nodes)
        use_fragment: Attach a visited fragment (else only the edge at v_b)

    Returns:
        SubProblem with at most sub_length nodes
    """
    if max_num < 1 or max_num > sub_length - 2:
        # Two slots stay reserved for the fragment endpoints
        raise ValueError(
            f"max_num must be in [1, sub_length - 2], got {max_num} for sub_length={sub_length}"
        )
    if tour.complete:
        raise ValueError("no unvisited nodes left; solve loop should have stopped")

    grid = tour.grid
    v_c = grid.nearest_unvisited(coord_pred)
    v_b = grid.nearest_visited(v_c)

    if use_knn:
        new_nodes = _bfs_expand(knn, tour.mask, [v_b], max_num)
        if not new_nodes:
            # v_b's neighbourhood is exhausted: seed with v_c itself
            new_nodes = [v_c] + _bfs_expand(knn, tour.mask, [v_c], max_num - 1, taken={v_c})
    else:
        nearest = nearest_unvisited_k(tour.instance, tour.mask, tour.instance.nodes[v_c], max_num)
        new_nodes = [int(v) for v in nearest]

    old_length = sub_length - len(new_nodes) if use_fragment else 2
    fragment = select_fragment(tour, v_b, old_length)

    nodes = tuple(new_nodes) + tuple(fragment)
    logger.debug(
        f"Sub-problem: v_c={v_c} v_b={v_b} new={len(new_nodes)} fragment={len(fragment)}"
    )
    return SubProblem(
        nodes=nodes,
        source=fragment[0],
        target=fragment[-1],
        fragment=tuple(fragment),
        new_nodes=tuple(new_nodes),
    )


def _bfs_expand(
    knn: KnnGraph,
    visited: VisitMask,
    seeds: List[int],
    limit: int,
    taken: Optional[set] = None,
) -> List[int]:
    """Breadth-first search over the k-NN graph collecting unvisited nodes."""
    taken = set(taken or ())
    collected: List[int] = []
    queue = deque(seeds)
    while queue and len(collected) < limit:
        current = queue.popleft()
        for neighbor in knn[current]:
            neighbor = int(neighbor)
            if neighbor in visited or neighbor in taken:
                continue
            taken.add(neighbor)
            collected.append(neighbor)
            queue.append(neighbor)
            if len(collected) >= limit:
                break
    return collected


def merge_subsolution(tour: PartialTour, sub: SubProblem, path: OpenPath) -> PartialTour:
    """
    Replace the sub-problem's fragment with its solved path.

    The fragment's former outer neighbours keep their links to source and
    target, so the result is again a single cycle.

    Raises:
        TourValidationError: Node-set or endpoint mismatch
    """
    order = [int(v) for v in path.order]
    if len(order) != len(set(order)) or set(order) != set(sub.nodes):
        raise TourValidationError("path does not visit exactly the sub-problem nodes")
    if order[0] != sub.source or order[-1] != sub.target:
        raise TourValidationError(
            f"path runs {order[0]}->{order[-1]}, expected {sub.source}->{sub.target}"
        )

    old_fragment = path_length(tour.instance, list(sub.fragment))
    new_path = path_length(tour.instance, order)

    for a, b in zip(order, order[1:]):
        tour.succ[a] = b
        tour.pred[b] = a
    for node in sub.new_nodes:
        tour.grid.mark_visited(node)

    tour.size += len(sub.new_nodes)
    tour.length += new_path - old_fragment
    return tour


def step_reward(tour_before: Union[PartialTour, float], tour_after: PartialTour) -> float:
    """Upper-level reward L(before) - L(after)."""
    before = tour_before.length if isinstance(tour_before, PartialTour) else float(tour_before)
    return before - tour_after.length
