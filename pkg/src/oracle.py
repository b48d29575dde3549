"""
Exact Held-Karp solvers for small closed tours and fixed-endpoint paths.

Both return the lexicographically smallest optimal order, comparing node
indices position by position.
"""

from typing import Tuple
import logging

import numpy as np

from .core import OpenPath, PathLike, ProblemTooLargeError, Tour, TspInstance, euclidean

logger = logging.getLogger(__name__)

MAX_ORACLE_NODES = 16
TIE_TOLERANCE = 1e-9


def _pairwise(points: np.ndarray) -> np.ndarray:
    return euclidean(points[:, None, :], points[None, :, :])


def _cost_to_go(dist: np.ndarray, end_cost: np.ndarray) -> np.ndarray:
    """
    Backward DP over subsets of the interior nodes.

    Local index 0 is the start; interior node i has local index i + 1.
    g[mask, j] is the cheapest way to go from j through every interior node
    outside `mask` and then pay end_cost.
    """
    m = dist.shape[0] - 1
    full = (1 << m) - 1
    g = np.full((full + 1, m + 1), np.inf)
    g[full] = end_cost
    bits = np.arange(m)
    for mask in range(full - 1, -1, -1):
        rem = bits[((mask >> bits) & 1) == 0]
        cand = dist[:, rem + 1] + g[mask | (1 << rem), rem + 1]
        g[mask] = cand.min(axis=1)
    return g


def _lexicographic_order(
    dist: np.ndarray, g: np.ndarray, labels: np.ndarray
) -> Tuple[list, float]:
    """Rebuild the optimal interior order, preferring the smallest label at every step."""
    m = dist.shape[0] - 1
    full = (1 << m) - 1
    by_label = np.argsort(labels[1:], kind="stable")
    mask, j = 0, 0
    order = []
    while mask != full:
        target = g[mask, j] + TIE_TOLERANCE
        for i in by_label:
            if (mask >> i) & 1:
                continue
            if dist[j, i + 1] + g[mask | (1 << i), i + 1] <= target:
                mask |= 1 << i
                j = int(i) + 1
                order.append(int(labels[j]))
                break
    return order, float(g[0, 0])


def held_karp_tour(instance: TspInstance) -> Tuple[Tour, float]:
    """
    Optimal closed tour starting at node 0.

    Raises:
        ProblemTooLargeError: If n > 16
    """
    n = instance.n
    if n > MAX_ORACLE_NODES:
        raise ProblemTooLargeError(
            f"held_karp_tour accepts at most {MAX_ORACLE_NODES} nodes, got {n}"
        )

    dist = _pairwise(instance.nodes)
    g = _cost_to_go(dist, dist[:, 0].copy())
    labels = np.arange(n)
    interior, _ = _lexicographic_order(dist, g, labels)
    order = [0] + interior
    length = float(np.sum(dist[order, np.roll(order, -1)]))
    logger.debug(f"Held-Karp tour over {n} nodes: {length:.6f}")
    return Tour.from_sequence(order), length


def held_karp_path(sub: PathLike, instance: TspInstance) -> Tuple[OpenPath, float]:
    """
    Optimal Hamiltonian path from sub.source to sub.target over sub.nodes.

    Raises:
        ProblemTooLargeError: If the node set has more than 16 nodes
        ValueError: If an endpoint is missing from the node set
    """
    nodes = [int(v) for v in sub.nodes]
    if len(nodes) > MAX_ORACLE_NODES:
        raise ProblemTooLargeError(
            f"held_karp_path accepts at most {MAX_ORACLE_NODES} nodes, got {len(nodes)}"
        )
    source, target = int(sub.source), int(sub.target)
    if source not in nodes or target not in nodes:
        raise ValueError("source and target must belong to the node set")
    if source == target:
        raise ValueError("source and target must differ")

    interior = sorted(v for v in nodes if v not in (source, target))
    labels = np.asarray([source] + interior, dtype=np.int64)
    dist = _pairwise(instance.nodes[labels])
    end_cost = euclidean(instance.nodes[labels], instance.nodes[target])
    g = _cost_to_go(dist, end_cost)
    middle, length = _lexicographic_order(dist, g, labels)
    order = [source] + middle + [target]
    return OpenPath(tuple(order), source, target), length
