"""
Agents - the interchangeable upper (where to look) and lower (how to connect) levels.

Each combination of one upper and one lower agent is a complete solver. The
learned agents wrap the policies; the others are the non-learned stand-ins
used for ablations and baselines.
"""

from dataclasses import dataclass
from typing import Any, Optional, Protocol
import logging

import numpy as np
import torch

from .config import Config
from .core import OpenPath, TspInstance
from .decomposer import PartialTour, SubProblem
from .external_solver import ExternalSolverAdapter
from .featurizer import NodeFeatures, featurize
from .heuristics import farthest_insertion_open, random_upper
from .lower_policy import LowerPolicy, PathProblem, solve_problems
from .upper_policy import UpperPolicy

logger = logging.getLogger(__name__)

UPPER_AGENTS = ("learned", "random")
LOWER_AGENTS = ("learned", "farthest", "external")


@dataclass
class UpperStep:
    """One upper-level decision: the action point plus what PPO needs to learn from it."""

    point: np.ndarray
    log_prob: float = 0.0
    value: float = 0.0
    observation: Optional[NodeFeatures] = None


class UpperAgent(Protocol):
    name: str
    learnable: bool

    def act(
        self, instance: TspInstance, tour: PartialTour, rng: np.random.Generator
    ) -> UpperStep: ...


class LowerAgent(Protocol):
    name: str
    learnable: bool

    def solve(
        self,
        sub: SubProblem,
        instance: TspInstance,
        generator: Optional[torch.Generator] = None,
    ) -> OpenPath: ...


class LearnedUpperAgent:
    """Featurizes the partial tour and queries the actor-critic."""

    name = "learned"
    learnable = True

    def __init__(self, policy: UpperPolicy, grid_h: int, grid_w: int, mode: str = "sample"):
        self.policy = policy
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.mode = mode

    def act(
        self, instance: TspInstance, tour: PartialTour, rng: np.random.Generator
    ) -> UpperStep:
        features = featurize(instance, tour, self.grid_h, self.grid_w)
        point, log_prob, value = self.policy.act(features, mode=self.mode, rng=rng)
        return UpperStep(point=point, log_prob=log_prob, value=value, observation=features)


class RandomUpperAgent:
    name = "random"
    learnable = False

    def act(
        self, instance: TspInstance, tour: PartialTour, rng: np.random.Generator
    ) -> UpperStep:
        return UpperStep(point=random_upper(rng))


class LearnedLowerAgent:
    """Decodes each sub-problem with the attention model in local coordinates."""

    name = "learned"
    learnable = True

    def __init__(self, policy: LowerPolicy, mode: str = "greedy", rollouts: int = 1):
        self.policy = policy
        self.mode = mode
        self.rollouts = rollouts

    def solve(
        self,
        sub: SubProblem,
        instance: TspInstance,
        generator: Optional[torch.Generator] = None,
    ) -> OpenPath:
        problem = PathProblem.from_subproblem(sub, instance)
        solution = solve_problems(
            self.policy, [problem], mode=self.mode, rollouts=self.rollouts, generator=generator
        )[0]
        return solution.path


class FarthestInsertionLowerAgent:
    name = "farthest"
    learnable = False

    def solve(
        self,
        sub: SubProblem,
        instance: TspInstance,
        generator: Optional[torch.Generator] = None,
    ) -> OpenPath:
        return farthest_insertion_open(sub, instance)


class ExternalLowerAgent:
    """Hands sub-problems to an external solver binary; failures fall back inside the adapter."""

    name = "external"
    learnable = False

    def __init__(self, adapter: ExternalSolverAdapter):
        self.adapter = adapter

    def solve(
        self,
        sub: SubProblem,
        instance: TspInstance,
        generator: Optional[torch.Generator] = None,
    ) -> OpenPath:
        return self.adapter.solve(sub, instance)


def build_upper(
    name: str,
    config: Config,
    policy: Optional[UpperPolicy] = None,
    mode: Optional[str] = None,
) -> Any:
    """
    Create an upper agent by name.

    Args:
        name: "learned" or "random"
        config: Run configuration (grid size, action mode)
        policy: Trained UpperPolicy, required for "learned"
        mode: Action mode override ("mean" or "sample")

    Raises:
        ValueError: Unknown name or missing policy
    """
    if name == "random":
        return RandomUpperAgent()
    if name == "learned":
        if policy is None:
            raise ValueError("the learned upper agent needs a trained policy (pass --checkpoint)")
        return LearnedUpperAgent(
            policy,
            config.featurizer.grid_h,
            config.featurizer.grid_w,
            mode=mode or config.solve.upper_mode,
        )
    raise ValueError(f"unknown upper agent '{name}', expected one of {UPPER_AGENTS}")


def build_lower(
    name: str,
    config: Config,
    policy: Optional[LowerPolicy] = None,
    adapter: Optional[ExternalSolverAdapter] = None,
    telemetry: Any = None,
    mode: Optional[str] = None,
) -> Any:
    """
    Create a lower agent by name.

    Args:
        name: "learned", "farthest" or "external"
        config: Run configuration (decode mode, rollouts, external solver settings)
        policy: Trained LowerPolicy, required for "learned"
        adapter: Preconfigured external adapter (default: built from config.external)
        telemetry: TelemetryLogger passed to a newly built adapter
        mode: Decode mode override ("greedy" or "sample")

    Raises:
        ValueError: Unknown name or missing policy
    """
    if name == "farthest":
        return FarthestInsertionLowerAgent()
    if name == "external":
        if adapter is None:
            adapter = ExternalSolverAdapter(
                command=config.external.command,
                time_limit=config.external.time_limit,
                coordinate_scale=config.external.coordinate_scale,
                telemetry=telemetry,
            )
        if not adapter.command:
            logger.warning("No external solver command configured; every call will fall back")
        return ExternalLowerAgent(adapter)
    if name == "learned":
        if policy is None:
            raise ValueError("the learned lower agent needs a trained policy (pass --checkpoint)")
        mode = mode or config.solve.lower_mode
        rollouts = 1 if mode == "greedy" else config.lower_training.rollouts
        return LearnedLowerAgent(policy, mode=mode, rollouts=rollouts)
    raise ValueError(f"unknown lower agent '{name}', expected one of {LOWER_AGENTS}")
