"""
Non-learned stand-ins for both levels: a uniform random upper policy and
farthest insertion for open paths and closed tours.
"""

from typing import List, Optional, Sequence
import logging

import numpy as np

from .core import OpenPath, PathLike, Tour, TspInstance, euclidean

logger = logging.getLogger(__name__)


def random_upper(rng: np.random.Generator) -> np.ndarray:
    """A point drawn uniformly from the unit square."""
    return rng.random(2)


class RandomUpper:
    """Seeded stream of uniform actions."""

    def __init__(self, seed: Optional[int] = None, rng: Optional[np.random.Generator] = None):
        self.rng = rng if rng is not None else np.random.default_rng(seed)

    def __call__(self) -> np.ndarray:
        return random_upper(self.rng)


def _insertion_costs(
    points: np.ndarray, order: Sequence[int], candidate: np.ndarray, closed: bool
) -> np.ndarray:
    pts = points[np.asarray(order)]
    nxt = np.roll(pts, -1, axis=0) if closed else pts[1:]
    cur = pts if closed else pts[:-1]
    return euclidean(cur, candidate) + euclidean(candidate, nxt) - euclidean(cur, nxt)


def _farthest_insertion(
    points: np.ndarray, order: List[int], remaining: np.ndarray, closed: bool
) -> List[int]:
    """
    Grow `order` by farthest insertion over the candidate indices in `remaining`.

    The selection key is the distance to the nearest already inserted node;
    ties go to the lower index, as do ties between insertion positions.
    """
    remaining = np.sort(np.asarray(remaining, dtype=np.int64))
    if remaining.size == 0:
        return order

    inserted = points[np.asarray(order)]
    min_dist = np.min(euclidean(points[remaining][:, None, :], inserted[None, :, :]), axis=1)
    alive = np.ones(remaining.size, dtype=bool)

    for _ in range(remaining.size):
        key = np.where(alive, min_dist, -np.inf)
        pick = int(np.argmax(key))
        node = int(remaining[pick])
        alive[pick] = False

        costs = _insertion_costs(points, order, points[node], closed)
        position = int(np.argmin(costs)) + 1
        order.insert(position, node)

        min_dist = np.minimum(min_dist, euclidean(points[remaining], points[node]))
    return order


def farthest_insertion_open(sub: PathLike, instance: TspInstance) -> OpenPath:
    """
    Farthest insertion for an open path with fixed endpoints.

    Starts from [source, target]; endpoints stay first and last.
    """
    nodes = [int(v) for v in sub.nodes]
    source, target = int(sub.source), int(sub.target)
    interior = np.asarray([v for v in nodes if v not in (source, target)], dtype=np.int64)
    order = _farthest_insertion(instance.nodes, [source, target], interior, closed=False)
    return OpenPath(tuple(order), source, target)


def farthest_insertion_tour(instance: TspInstance) -> Tour:
    """
    Classic farthest insertion on the whole instance.

    Starts from the depot and the node farthest from it; the returned tour
    begins at the depot.
    """
    depot = instance.depot
    dist = instance.distances_from(depot)
    far = int(np.argmax(dist))
    if far == depot:
        far = (depot + 1) % instance.n
    others = np.asarray([v for v in range(instance.n) if v not in (depot, far)], dtype=np.int64)
    order = _farthest_insertion(instance.nodes, [depot, far], others, closed=True)
    logger.debug(f"Farthest insertion tour over {instance.n} nodes")
    return Tour.from_sequence(order)
