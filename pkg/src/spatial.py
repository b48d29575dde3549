"""
Spatial index - exact k-NN graph and nearest visited/unvisited queries.

Ties are broken by the lower node index everywhere.
"""

from dataclasses import dataclass
from typing import Iterable, List, Set, Tuple
import logging
import math

import numpy as np
from scipy.spatial import cKDTree

from .core import EmptyDomainError, TspInstance, euclidean

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class KnnGraph:
    """Each row lists the k nearest other nodes, ascending by (distance, index)."""

    k: int
    neighbors: np.ndarray

    def __getitem__(self, node: int) -> np.ndarray:
        return self.neighbors[node]

    @property
    def n(self) -> int:
        return int(self.neighbors.shape[0])


class VisitMask:
    """Bitset of visited nodes."""

    def __init__(self, n: int):
        self.bits = np.zeros(n, dtype=bool)

    @classmethod
    def from_nodes(cls, n: int, nodes: Iterable[int]) -> "VisitMask":
        mask = cls(n)
        for node in nodes:
            mask.bits[int(node)] = True
        return mask

    def mark(self, node: int) -> None:
        self.bits[node] = True

    def __contains__(self, node: int) -> bool:
        return bool(self.bits[node])

    def __len__(self) -> int:
        return int(self.bits.shape[0])

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def copy(self) -> "VisitMask":
        mask = VisitMask(len(self))
        mask.bits[:] = self.bits
        return mask


def build_knn(instance: TspInstance, k: int) -> KnnGraph:
    """
    Build the exact k-nearest-neighbor graph.

    Args:
        instance: Instance whose nodes are indexed
        k: Neighbors per node, clamped to n - 1

    Returns:
        KnnGraph with rows sorted by (distance, index), no self loops
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")

    n = instance.n
    kk = min(k, n - 1)
    points = instance.nodes
    tree = cKDTree(points)

    # One extra candidate for the node itself and one to detect ties at the cut
    query_k = min(kk + 2, n)
    _, candidates = tree.query(points, k=query_k)
    candidates = np.asarray(candidates, dtype=np.int64).reshape(n, query_k)

    neighbors = np.empty((n, kk), dtype=np.int64)
    for i in range(n):
        row = candidates[i][candidates[i] != i]
        dist = euclidean(points[row], points[i])
        order = np.lexsort((row, dist))
        row, dist = row[order], dist[order]

        if row.size > kk and dist[kk] == dist[kk - 1]:
            # A tie straddles the cut: gather everything at that radius
            radius = float(dist[kk - 1])
            ball = np.asarray(tree.query_ball_point(points[i], r=radius * (1 + 1e-12) + 1e-15))
            ball = ball[ball != i]
            ball_dist = euclidean(points[ball], points[i])
            order = np.lexsort((ball, ball_dist))
            row = ball[order]
        neighbors[i] = row[:kk]

    neighbors.setflags(write=False)
    logger.debug(f"Built {kk}-NN graph over {n} nodes")
    return KnnGraph(k=kk, neighbors=neighbors)


def _argmin_masked(dist: np.ndarray, allowed: np.ndarray) -> int:
    masked = np.where(allowed, dist, np.inf)
    best = int(np.argmin(masked))
    if not np.isfinite(masked[best]):
        raise EmptyDomainError("no candidate node available")
    return best


def nearest_unvisited(instance: TspInstance, mask: VisitMask, coord: Tuple[float, float]) -> int:
    """
    Unvisited node closest to a point (linear scan).

    Raises:
        EmptyDomainError: If every node is visited
    """
    if mask.bits.all():
        raise EmptyDomainError("all nodes are visited")
    dist = euclidean(instance.nodes, np.asarray(coord, dtype=np.float64))
    return _argmin_masked(dist, ~mask.bits)


def nearest_visited(instance: TspInstance, mask: VisitMask, node: int) -> int:
    """
    Visited node closest to a given node, excluding the node itself (linear scan).

    Raises:
        EmptyDomainError: If no other node is visited
    """
    allowed = mask.bits.copy()
    allowed[node] = False
    if not allowed.any():
        raise EmptyDomainError("no visited node to attach to")
    dist = instance.distances_from(node)
    return _argmin_masked(dist, allowed)


def nearest_unvisited_k(
    instance: TspInstance, mask: VisitMask, coord: Tuple[float, float], count: int
) -> np.ndarray:
    """The `count` unvisited nodes closest to a point, ascending by (distance, index)."""
    candidates = np.flatnonzero(~mask.bits)
    if candidates.size == 0:
        raise EmptyDomainError("all nodes are visited")
    dist = euclidean(instance.nodes[candidates], np.asarray(coord, dtype=np.float64))
    order = np.lexsort((candidates, dist))
    return candidates[order[:count]]


class VisitationGrid:
    """
    Uniform-grid buckets split by visitation state.

    Supports nearest visited / unvisited lookups by ring search; results match
    the linear scans above, including lower-index tie-breaking.
    """

    def __init__(self, instance: TspInstance, cell_target: float = 2.0):
        """
        Initialize the grid with every node unvisited.

        Args:
            instance: Instance to index
            cell_target: Average number of nodes per cell
        """
        self.instance = instance
        self.points = instance.nodes
        self.size = max(1, int(math.sqrt(instance.n / cell_target)))
        cells = np.minimum((self.points * self.size).astype(np.int64), self.size - 1)
        self.cell_x = cells[:, 0]
        self.cell_y = cells[:, 1]

        self.visited = VisitMask(instance.n)
        self._buckets: List[List[Set[int]]] = [
            [set() for _ in range(self.size * self.size)],  # unvisited
            [set() for _ in range(self.size * self.size)],  # visited
        ]
        for node in range(instance.n):
            self._buckets[0][self._cell(node)].add(node)
        self._counts = [instance.n, 0]

    def _cell(self, node: int) -> int:
        return int(self.cell_y[node]) * self.size + int(self.cell_x[node])

    def mark_visited(self, node: int) -> None:
        if node in self.visited:
            return
        cell = self._cell(node)
        self._buckets[0][cell].discard(node)
        self._buckets[1][cell].add(node)
        self._counts[0] -= 1
        self._counts[1] += 1
        self.visited.mark(node)

    def copy(self) -> "VisitationGrid":
        clone = VisitationGrid.__new__(VisitationGrid)
        clone.instance = self.instance
        clone.points = self.points
        clone.size = self.size
        clone.cell_x = self.cell_x
        clone.cell_y = self.cell_y
        clone.visited = self.visited.copy()
        clone._buckets = [[set(b) for b in side] for side in self._buckets]
        clone._counts = list(self._counts)
        return clone

    def nearest_unvisited(self, coord: Tuple[float, float]) -> int:
        if self._counts[0] == 0:
            raise EmptyDomainError("all nodes are visited")
        return self._search(np.asarray(coord, dtype=np.float64), 0, exclude=-1)

    def nearest_visited(self, node: int) -> int:
        available = self._counts[1] - (1 if node in self.visited else 0)
        if available <= 0:
            raise EmptyDomainError("no visited node to attach to")
        return self._search(self.points[node], 1, exclude=node)

    def _search(self, point: np.ndarray, side: int, exclude: int) -> int:
        size = self.size
        cx = min(int(point[0] * size), size - 1)
        cy = min(int(point[1] * size), size - 1)
        width = 1.0 / size
        best_d = math.inf
        best = -1

        for ring in range(size + 1):
            # Cells in this ring are at least (ring - 1) cell widths away
            if best >= 0 and (ring - 1) * width > best_d:
                break
            candidates = []
            for gy in range(cy - ring, cy + ring + 1):
                if gy < 0 or gy >= size:
                    continue
                on_edge_row = gy == cy - ring or gy == cy + ring
                step = 1 if on_edge_row else 2 * ring
                for gx in range(cx - ring, cx + ring + 1, max(step, 1)):
                    if 0 <= gx < size:
                        candidates.extend(self._buckets[side][gy * size + gx])
            if not candidates:
                continue
            cand = np.asarray(candidates, dtype=np.int64)
            if exclude >= 0:
                cand = cand[cand != exclude]
                if cand.size == 0:
                    continue
            dist = euclidean(self.points[cand], point)
            order = np.lexsort((cand, dist))
            d, c = float(dist[order[0]]), int(cand[order[0]])
            if d < best_d or (d == best_d and c < best):
                best_d, best = d, c

        if best < 0:
            raise EmptyDomainError("no candidate node available")
        return best
