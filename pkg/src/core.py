"""
Core data model - instances, tours, open paths and their costs.

All coordinates live in the unit square and the cost of an edge is the
Euclidean distance between its endpoints in double precision.
"""

from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence, Tuple, Union
import logging

import numpy as np

logger = logging.getLogger(__name__)


class TourValidationError(ValueError):
    """Raised when a tour or path is not a valid visiting order."""


class UnsupportedFormatError(ValueError):
    """Raised for file formats or edge-weight types we do not read."""


class InstanceFormatError(ValueError):
    """Raised when an instance or tour file is malformed."""


class EmptyDomainError(LookupError):
    """Raised when a nearest-node query has no candidate left."""


class ProblemTooLargeError(ValueError):
    """Raised when an exact solver is asked for more nodes than it accepts."""


class NonFiniteLossError(FloatingPointError):
    """Raised when a training loss is NaN or infinite; carries the loss report."""

    def __init__(self, message: str, report: Optional[dict] = None):
        super().__init__(message)
        self.report = dict(report or {})


def euclidean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance along the last axis."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(frozen=True, eq=False)
class TspInstance:
    """
    A Euclidean TSP instance in the unit square.

    Attributes:
        nodes: (n, 2) array of coordinates, every component in [0, 1]
        depot: Index of the depot node
        name: Optional instance identifier
        scale: Factor mapping unit coordinates back to the source units
        offset: Translation applied before scaling (source units)
    """

    nodes: np.ndarray
    depot: int = 0
    name: str = ""
    scale: float = 1.0
    offset: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        nodes = np.array(self.nodes, dtype=np.float64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError(f"nodes must have shape (n, 2), got {nodes.shape}")
        if nodes.shape[0] < 2:
            raise ValueError(f"an instance needs at least 2 nodes, got {nodes.shape[0]}")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("node coordinates must be finite")
        if nodes.min() < 0.0 or nodes.max() > 1.0:
            raise ValueError("node coordinates must lie in [0, 1]")
        if not 0 <= int(self.depot) < nodes.shape[0]:
            raise ValueError(f"depot {self.depot} out of range for n={nodes.shape[0]}")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "depot", int(self.depot))

    @property
    def n(self) -> int:
        return int(self.nodes.shape[0])

    def cost(self, i: int, j: int) -> float:
        return float(euclidean(self.nodes[i], self.nodes[j]))

    def distances_from(self, i: int) -> np.ndarray:
        """Distances from node i to every node."""
        return euclidean(self.nodes, self.nodes[i])

    def original_length(self, length: float) -> float:
        """Convert a unit-square length back to the source units."""
        return float(length) * self.scale

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TspInstance):
            return NotImplemented
        return (
            self.depot == other.depot
            and self.nodes.shape == other.nodes.shape
            and bool(np.array_equal(self.nodes, other.nodes))
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Tour:
    """A closed Hamiltonian cycle given as a permutation of node indices."""

    order: Tuple[int, ...]

    @classmethod
    def from_sequence(cls, order: Iterable[int]) -> "Tour":
        return cls(tuple(int(v) for v in order))

    def __len__(self) -> int:
        return len(self.order)


@dataclass(frozen=True)
class OpenPath:
    """A Hamiltonian path over a node subset with fixed first and last nodes."""

    order: Tuple[int, ...]
    source: int = field(default=-1)
    target: int = field(default=-1)

    def __post_init__(self) -> None:
        order = tuple(int(v) for v in self.order)
        object.__setattr__(self, "order", order)
        if self.source < 0 and order:
            object.__setattr__(self, "source", order[0])
        if self.target < 0 and order:
            object.__setattr__(self, "target", order[-1])

    @classmethod
    def from_sequence(cls, order: Iterable[int]) -> "OpenPath":
        seq = tuple(int(v) for v in order)
        return cls(seq, seq[0], seq[-1])

    def __len__(self) -> int:
        return len(self.order)


class PathLike(Protocol):
    """Anything naming a node subset and two fixed endpoints."""

    nodes: Sequence[int]
    source: int
    target: int


def _as_order(tour: Union[Tour, OpenPath, Sequence[int], np.ndarray]) -> np.ndarray:
    if isinstance(tour, (Tour, OpenPath)):
        return np.asarray(tour.order, dtype=np.int64)
    return np.asarray(tour, dtype=np.int64).reshape(-1)


def validate_tour(instance: TspInstance, tour: Union[Tour, Sequence[int], np.ndarray]) -> None:
    """
    Check that a tour is a permutation of all node indices.

    Raises:
        TourValidationError: If the order misses, repeats or invents nodes
    """
    order = _as_order(tour)
    if order.size != instance.n:
        raise TourValidationError(
            f"tour has {order.size} entries, instance has {instance.n} nodes"
        )
    if order.min() < 0 or order.max() >= instance.n:
        raise TourValidationError("tour contains indices outside [0, n)")
    if np.unique(order).size != instance.n:
        raise TourValidationError("tour visits a node more than once")


def validate_path(instance: TspInstance, path: OpenPath) -> None:
    """
    Check the open-path invariants: endpoints first/last, no repeats.

    Raises:
        TourValidationError: If any invariant is broken
    """
    order = _as_order(path)
    if order.size == 0:
        raise TourValidationError("path is empty")
    if order.min() < 0 or order.max() >= instance.n:
        raise TourValidationError("path contains indices outside [0, n)")
    if np.unique(order).size != order.size:
        raise TourValidationError("path visits a node more than once")
    if order[0] != path.source or order[-1] != path.target:
        raise TourValidationError(
            f"path runs {order[0]}->{order[-1]}, expected {path.source}->{path.target}"
        )


def tour_length(
    instance: TspInstance,
    tour: Union[Tour, Sequence[int], np.ndarray],
    validate: bool = True,
) -> float:
    """
    Length of the closed cycle, including the edge back to the first node.

    Args:
        instance: The instance the tour belongs to
        tour: Tour or raw permutation
        validate: Check the permutation first

    Returns:
        Total Euclidean length
    """
    order = _as_order(tour)
    if validate:
        validate_tour(instance, order)
    pts = instance.nodes[order]
    return float(np.sum(euclidean(pts, np.roll(pts, -1, axis=0))))


def cycle_length(instance: TspInstance, order: Sequence[int]) -> float:
    """Closed length over an arbitrary node subset (no permutation check)."""
    return tour_length(instance, order, validate=False)


def path_length(instance: TspInstance, path: Union[OpenPath, Sequence[int]]) -> float:
    """
    Length of an open path: consecutive pairs only, no closing edge.

    Raises:
        TourValidationError: If the path repeats a node
    """
    if isinstance(path, OpenPath):
        validate_path(instance, path)
        order = _as_order(path)
    else:
        order = _as_order(path)
        if np.unique(order).size != order.size:
            raise TourValidationError("path visits a node more than once")
    if order.size < 2:
        return 0.0
    pts = instance.nodes[order]
    return float(np.sum(euclidean(pts[:-1], pts[1:])))


def cut_cycle(cycle: Sequence[int], source: int, target: int) -> list:
    """
    Open a cyclic order at the source-target edge, oriented source -> target.

    Raises:
        ValueError: If source and target are not adjacent in the cycle
    """
    cycle = [int(v) for v in cycle]
    start = cycle.index(source)
    rotated = cycle[start:] + cycle[:start]
    if len(rotated) == 2 or rotated[-1] == target:
        return rotated
    if rotated[1] == target:
        return [source] + rotated[:0:-1]
    raise ValueError(f"endpoints {source} and {target} are not adjacent in the cycle")


def generate_uniform(n: int, seed: int, name: Optional[str] = None) -> TspInstance:
    """
    Sample n points uniformly in the unit square.

    Args:
        n: Number of nodes (at least 2)
        seed: Seed for numpy's default generator
        name: Optional instance name

    Returns:
        Instance with depot 0, identical for identical (n, seed)
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    rng = np.random.default_rng(seed)
    nodes = rng.random((n, 2))
    return TspInstance(nodes=nodes, depot=0, name=name or f"uniform_{n}_{seed}")


def optimality_gap(length: float, reference_length: float) -> float:
    """Gap in percent: 100 * (L - L_ref) / L_ref. Negative when beating the reference."""
    if reference_length <= 0:
        raise ValueError(f"reference length must be positive, got {reference_length}")
    return 100.0 * (length - reference_length) / reference_length
