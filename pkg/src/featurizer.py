"""
Pixel featurizer - node feature matrix, grid clustering and scatter-max pseudo-images.
"""

from dataclasses import dataclass
from typing import Union
import logging

import numpy as np
import torch

from .core import TspInstance
from .decomposer import PartialTour

logger = logging.getLogger(__name__)

NODE_FEATURES = (
    "x_a", "y_a",
    "dx_grid", "dy_grid",
    "dx_cluster", "dy_cluster",
    "x_pre", "y_pre",
    "x_nxt", "y_nxt",
    "m_select",
)
NUM_NODE_FEATURES = len(NODE_FEATURES)


@dataclass(frozen=True, eq=False)
class NodeFeatures:
    """Per-node feature matrix (n, 11) and grid cell ids in [0, H*W)."""

    matrix: np.ndarray
    cells: np.ndarray
    grid_h: int
    grid_w: int


def grid_cells(nodes: np.ndarray, grid_h: int, grid_w: int) -> np.ndarray:
    """Row-major cell id floor(y*H)*W + floor(x*W); coordinate 1.0 falls in the last cell."""
    col = np.minimum((nodes[:, 0] * grid_w).astype(np.int64), grid_w - 1)
    row = np.minimum((nodes[:, 1] * grid_h).astype(np.int64), grid_h - 1)
    return row * grid_w + col


def featurize(instance: TspInstance, tour: PartialTour, grid_h: int, grid_w: int) -> NodeFeatures:
    """
    Build the 11-column node features for the current partial tour.

    Args:
        instance: Instance being solved
        tour: Current partial tour
        grid_h: Grid rows
        grid_w: Grid columns

    Returns:
        NodeFeatures with columns in NODE_FEATURES order
    """
    if grid_h < 1 or grid_w < 1:
        raise ValueError(f"grid must be at least 1x1, got {grid_h}x{grid_w}")

    nodes = instance.nodes
    n = instance.n
    cells = grid_cells(nodes, grid_h, grid_w)
    col = cells % grid_w
    row = cells // grid_w

    centers = np.stack([(col + 0.5) / grid_w, (row + 0.5) / grid_h], axis=1)

    counts = np.bincount(cells, minlength=grid_h * grid_w).astype(np.float64)
    sums_x = np.bincount(cells, weights=nodes[:, 0], minlength=grid_h * grid_w)
    sums_y = np.bincount(cells, weights=nodes[:, 1], minlength=grid_h * grid_w)
    safe = np.maximum(counts, 1.0)
    means = np.stack([sums_x / safe, sums_y / safe], axis=1)

    matrix = np.zeros((n, NUM_NODE_FEATURES), dtype=np.float64)
    matrix[:, 0:2] = nodes
    matrix[:, 2:4] = nodes - centers
    matrix[:, 4:6] = nodes - means[cells]

    visited = tour.mask.bits
    members = np.flatnonzero(visited)
    if members.size:
        matrix[members, 6:8] = nodes[tour.pred[members]]
        matrix[members, 8:10] = nodes[tour.succ[members]]
        matrix[members, 10] = 1.0

    return NodeFeatures(matrix=matrix, cells=cells, grid_h=grid_h, grid_w=grid_w)


def scatter_max(
    embedded: Union[torch.Tensor, np.ndarray],
    cells: Union[torch.Tensor, np.ndarray],
    grid_h: int,
    grid_w: int,
) -> torch.Tensor:
    """
    Per-channel max of node embeddings within each grid cell.

    Args:
        embedded: (N, C) node embeddings
        cells: (N,) cell ids
        grid_h: Grid rows
        grid_w: Grid columns

    Returns:
        (H, W, C) pseudo-image; empty cells are zero
    """
    embedded = torch.as_tensor(embedded)
    cells = torch.as_tensor(cells, dtype=torch.long, device=embedded.device)
    if embedded.dim() != 2 or embedded.shape[0] != cells.shape[0]:
        raise ValueError(
            f"expected (N, C) embeddings for {cells.shape[0]} cells, got {tuple(embedded.shape)}"
        )

    channels = embedded.shape[1]
    canvas = torch.zeros(grid_h * grid_w, channels, dtype=embedded.dtype, device=embedded.device)
    index = cells.unsqueeze(1).expand(-1, channels)
    canvas = canvas.scatter_reduce(0, index, embedded, reduce="amax", include_self=False)
    return canvas.view(grid_h, grid_w, channels)
