"""
Main HierarchicalSolver class that ties the two levels together.

A solver is one upper agent plus one lower agent; learned agents take their
weights from a training checkpoint.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union
import logging
import time

import numpy as np

from .agents import build_lower, build_upper
from .checkpoint_manager import load_checkpoint
from .config import Config
from .core import Tour, TspInstance
from .external_solver import ExternalSolverAdapter
from .lower_policy import LowerPolicy
from .spatial import build_knn
from .telemetry import TelemetryLogger
from .trainer import rollout_episode
from .upper_policy import UpperPolicy

logger = logging.getLogger(__name__)

# Model-shape sections always come from the checkpoint the weights were trained with
MODEL_SECTIONS = ("featurizer", "upper", "lower")


@dataclass
class SolveResult:
    instance_id: str
    n: int
    tour: Tour
    length: float
    seconds: float
    subproblems: int
    combo: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "n": self.n,
            "length": self.length,
            "seconds": self.seconds,
            "subproblems": self.subproblems,
            "combo": self.combo,
        }


class HierarchicalSolver:
    """
    Hierarchical TSP solver.

    This class:
    1. Builds the upper and lower agents named in `config.solve`
    2. Loads learned weights from a checkpoint when needed
    3. Solves instances one by one or in a thread pool
    4. Reports every solve to telemetry
    """

    def __init__(
        self,
        config: Optional[Config] = None,
        upper_policy: Optional[UpperPolicy] = None,
        lower_policy: Optional[LowerPolicy] = None,
        telemetry: Optional[TelemetryLogger] = None,
        adapter: Optional[ExternalSolverAdapter] = None,
    ):
        """
        Initialize the solver.

        Args:
            config: Run configuration (default: all defaults)
            upper_policy: Trained upper policy, required when config.solve.upper is "learned"
            lower_policy: Trained lower policy, required when config.solve.lower is "learned"
            telemetry: TelemetryLogger for solve events (None to disable)
            adapter: External solver adapter for the "external" lower agent
        """
        self.config = config or Config()
        self.telemetry = telemetry
        for policy in (upper_policy, lower_policy):
            if policy is not None:
                policy.eval()
        self.upper = build_upper(self.config.solve.upper, self.config, upper_policy)
        self.lower = build_lower(
            self.config.solve.lower, self.config, lower_policy, adapter, telemetry
        )

    @classmethod
    def from_checkpoint(
        cls,
        path: Optional[Union[str, Path]],
        config: Optional[Config] = None,
        telemetry: Optional[TelemetryLogger] = None,
    ) -> "HierarchicalSolver":
        """
        Build a solver, loading learned weights from `path` when any level is learned.

        Raises:
            ValueError: A learned level is requested but no checkpoint was given
        """
        config = config or Config()
        needs_weights = "learned" in (config.solve.upper, config.solve.lower)
        if not needs_weights:
            return cls(config, telemetry=telemetry)
        if path is None:
            raise ValueError(
                f"combo {config.solve.upper}+{config.solve.lower} needs a checkpoint"
            )

        payload = load_checkpoint(path)
        trained = payload.get("trainer", {}).get("config")
        if trained:
            data = config.model_dump()
            for section in MODEL_SECTIONS:
                data[section] = trained[section]
            config = Config.model_validate(data)

        upper_policy = lower_policy = None
        if config.solve.upper == "learned":
            upper_policy = UpperPolicy(
                config.upper, config.featurizer.grid_h, config.featurizer.grid_w
            )
            upper_policy.load_state_dict(payload["upper"])
        if config.solve.lower == "learned":
            lower_policy = LowerPolicy(config.lower)
            lower_policy.load_state_dict(payload["lower"])
        logger.info(f"Loaded policies from {path}")
        return cls(config, upper_policy, lower_policy, telemetry)

    @property
    def combo(self) -> str:
        return f"{self.upper.name}+{self.lower.name}"

    def solve(self, instance: TspInstance, seed: Optional[int] = None) -> SolveResult:
        """
        Solve one instance.

        The reported time covers the k-NN build and the solve loop; model
        loading happened at construction.

        Args:
            instance: Instance to solve
            seed: Seed for sampled actions (default: config.seed)
        """
        rng = np.random.default_rng(self.config.seed if seed is None else seed)
        start_time = time.perf_counter()
        knn = build_knn(instance, self.config.decomposer.k)
        episode = rollout_episode(instance, self.upper, self.lower, self.config, rng, knn)
        seconds = time.perf_counter() - start_time

        result = SolveResult(
            instance_id=instance.name or f"instance_{instance.n}",
            n=instance.n,
            tour=episode.tour,
            length=episode.length,
            seconds=seconds,
            subproblems=episode.steps,
            combo=self.combo,
        )
        if self.telemetry:
            self.telemetry.log_solve(
                instance_id=result.instance_id,
                n=result.n,
                length=result.length,
                seconds=result.seconds,
                combo=result.combo,
                subproblems=result.subproblems,
            )
        logger.info(
            f"Solved {result.instance_id} (n={result.n}) with {self.combo}: "
            f"length {result.length:.6f} in {seconds:.2f}s"
        )
        return result

    def solve_many(
        self, instances: Sequence[TspInstance], workers: Optional[int] = None
    ) -> List[SolveResult]:
        """
        Solve a batch; results keep the input order.

        Instance i uses seed config.seed + i, so the outcome does not depend on
        the worker count.
        """
        workers = workers or self.config.workers
        seeds = [self.config.seed + i for i in range(len(instances))]
        if workers > 1 and len(instances) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(self.solve, instances, seeds))
        return [self.solve(inst, seed) for inst, seed in zip(instances, seeds)]

    def get_metrics(self) -> Dict[str, Any]:
        """
        Get aggregated telemetry metrics.

        Returns:
            Dict with telemetry data or disabled message
        """
        if not self.telemetry:
            return {"telemetry_enabled": False, "message": "Telemetry is disabled"}
        return {
            "telemetry_enabled": True,
            "solve_metrics": self.telemetry.get_solve_metrics(),
            "health_snapshot": self.telemetry.get_health_snapshot(),
        }

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.telemetry:
            self.telemetry.close()
