"""
Hierarchical TSP Solver

Divide-and-conquer reinforcement learning for large Euclidean TSP: an upper
policy picks where the next sub-problem grows the tour, a lower policy solves
that sub-problem as an open path with fixed endpoints.
"""

from .core import (
    OpenPath,
    Tour,
    TspInstance,
    generate_uniform,
    optimality_gap,
    path_length,
    tour_length,
)
from .config import Config, load_config
from .framework import HierarchicalSolver, SolveResult
from .trainer import JointTrainer, rollout_episode
from .checkpoint_manager import CheckpointManager
from .telemetry import TelemetryLogger
from .database import CheckpointDatabase

__version__ = "0.1.0"

__all__ = [
    "OpenPath",
    "Tour",
    "TspInstance",
    "generate_uniform",
    "optimality_gap",
    "path_length",
    "tour_length",
    "Config",
    "load_config",
    "HierarchicalSolver",
    "SolveResult",
    "JointTrainer",
    "rollout_episode",
    "CheckpointManager",
    "TelemetryLogger",
    "CheckpointDatabase",
]
