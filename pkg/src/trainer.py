"""
Trainer - episode rollouts, warm-up, joint training and checkpoint scheduling.

One epoch collects `episodes_per_epoch` solve episodes with the current
policies, runs a PPO update on the upper trajectories and REINFORCE updates on
the sub-problems those episodes produced. Every run is reproducible from its
config and master seed.
"""

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Deque, Dict, List, Optional, Sequence, Tuple, Union
import logging
import math
import time

import numpy as np
import torch

from .agents import (
    FarthestInsertionLowerAgent,
    LearnedLowerAgent,
    LearnedUpperAgent,
    RandomUpperAgent,
    build_lower,
    build_upper,
)
from .checkpoint_manager import CheckpointManager, load_checkpoint
from .config import Config, save_config
from .core import (
    NonFiniteLossError,
    Tour,
    TspInstance,
    generate_uniform,
    optimality_gap,
    tour_length,
)
from .decomposer import (
    SubProblem,
    generate_subproblem,
    init_tour,
    merge_subsolution,
    step_reward,
)
from .heuristics import farthest_insertion_tour
from .instance_io import load_instance, read_tour
from .lower_policy import (
    LowerPolicy,
    PathProblem,
    random_path_problems,
    reinforce_update,
    validation_gap,
    warmup_pretrain,
)
from .spatial import KnnGraph, build_knn
from .telemetry import MetricsStream
from .upper_policy import Trajectory, UpperPolicy, make_optimizer, ppo_update

logger = logging.getLogger(__name__)

SEED_BITS = 2**62
INSTANCE_SUFFIXES = (".json", ".tsp")


@dataclass
class EpisodeResult:
    """A finished solve episode."""

    instance: TspInstance
    tour: Tour
    length: float
    initial_length: float
    trajectory: Trajectory
    subproblems: List[SubProblem]
    seconds: float

    @property
    def steps(self) -> int:
        return len(self.subproblems)

    @property
    def total_reward(self) -> float:
        return float(sum(self.trajectory.rewards))


def rollout_episode(
    instance: TspInstance,
    upper: Any,
    lower: Any,
    config: Config,
    rng: np.random.Generator,
    knn: Optional[KnnGraph] = None,
) -> EpisodeResult:
    """
    Build a complete tour with one upper and one lower agent.

    init tour -> repeat {upper action, sub-problem, lower solve, merge, reward}
    until every node is visited. Rewards telescope to L(init) - L(final).

    Args:
        instance: Instance to solve
        upper: Upper agent (learned or random)
        lower: Lower agent (learned, farthest or external)
        config: Run configuration (decomposer settings)
        rng: Generator for upper actions; also seeds the lower decoder
        knn: Prebuilt k-NN graph (built from config.decomposer.k otherwise)

    Returns:
        EpisodeResult with the validated tour and the upper trajectory
    """
    start_time = time.perf_counter()
    dc = config.decomposer
    if knn is None:
        knn = build_knn(instance, dc.k)

    generator = torch.Generator().manual_seed(int(rng.integers(SEED_BITS)))
    tour = init_tour(instance, knn)
    initial_length = tour.length
    trajectory = Trajectory()
    subproblems: List[SubProblem] = []

    while not tour.complete:
        step = upper.act(instance, tour, rng)
        sub = generate_subproblem(
            knn,
            tour,
            (float(step.point[0]), float(step.point[1])),
            dc.sub_length,
            dc.max_num,
            use_knn=dc.use_knn,
            use_fragment=dc.use_fragment,
        )
        path = lower.solve(sub, instance, generator=generator)
        before = tour.length
        visited = tour.size
        merge_subsolution(tour, sub, path)
        if tour.size <= visited:
            raise RuntimeError(f"solve loop made no progress at {visited}/{instance.n} nodes")
        reward = step_reward(before, tour)
        trajectory.append(
            step.observation, step.point, step.log_prob, reward, step.value, tour.complete
        )
        subproblems.append(sub)

    final = tour.to_tour()
    length = tour_length(instance, final)
    seconds = time.perf_counter() - start_time
    logger.debug(
        f"Episode {instance.name or instance.n}: {len(subproblems)} steps, "
        f"length {length:.4f}, {seconds:.2f}s"
    )
    return EpisodeResult(
        instance=instance,
        tour=final,
        length=length,
        initial_length=initial_length,
        trajectory=trajectory,
        subproblems=subproblems,
        seconds=seconds,
    )


class SubProblemBuffer:
    """FIFO-bounded store of sub-problems (in local coordinates) for lower-level training."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._items: Deque[PathProblem] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def add(self, problem: PathProblem) -> None:
        self._items.append(problem)

    def extend(self, subproblems: Sequence[SubProblem], instance: TspInstance) -> int:
        """Store every sub-problem with at least one interior node; returns how many were kept."""
        kept = 0
        for sub in subproblems:
            if sub.size > 2:
                self._items.append(PathProblem.from_subproblem(sub, instance))
                kept += 1
        return kept

    def sample(self, rng: np.random.Generator, count: int) -> List[PathProblem]:
        """Draw without replacement (all items when fewer than count)."""
        if not self._items:
            return []
        index = rng.choice(len(self._items), size=min(count, len(self._items)), replace=False)
        return [self._items[int(i)] for i in index]

    def state(self) -> List[PathProblem]:
        return list(self._items)

    def load_state(self, items: Sequence[PathProblem]) -> None:
        self._items = deque(items, maxlen=self.capacity)


@dataclass
class TrainingResult:
    checkpoints: List[Path] = field(default_factory=list)
    metrics: List[Dict[str, Any]] = field(default_factory=list)
    halted: bool = False
    error: Optional[str] = None


def _mean(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if len(values) else None


class JointTrainer:
    """
    Warm-up then joint training of both levels.

    The agents used for collection follow `config.solve`: a random upper agent
    is never trained, and only the learned lower agent is pre-trained and
    updated from the buffer.
    """

    def __init__(self, config: Config, telemetry: Any = None):
        self.config = config
        self.telemetry = telemetry
        self.device = torch.device(config.device)

        # One master seed fans out to every random stream of the run
        streams = np.random.SeedSequence(config.seed).spawn(6)
        self.instance_rng = np.random.default_rng(streams[0])
        self.action_rng = np.random.default_rng(streams[1])
        self.update_rng = np.random.default_rng(streams[2])
        torch.manual_seed(int(streams[3].generate_state(1)[0]))
        self.lower_generator = torch.Generator().manual_seed(
            int(streams[4].generate_state(1)[0])
        )
        validation_rng = np.random.default_rng(streams[5])

        self.upper_policy = UpperPolicy(
            config.upper, config.featurizer.grid_h, config.featurizer.grid_w
        ).to(self.device)
        self.lower_policy = LowerPolicy(config.lower).to(self.device)
        opt = config.optimizer
        self.upper_optimizer = make_optimizer(self.upper_policy, opt.lr, opt.weight_decay)
        self.lower_optimizer = make_optimizer(self.lower_policy, opt.lr, opt.weight_decay)

        self.upper = build_upper(config.solve.upper, config, self.upper_policy, mode="sample")
        self.lower = build_lower(
            config.solve.lower, config, self.lower_policy, telemetry=telemetry, mode="greedy"
        )
        self.eval_upper = build_upper(config.solve.upper, config, self.upper_policy, mode="mean")
        self.train_upper = isinstance(self.upper, LearnedUpperAgent)
        self.train_lower = isinstance(self.lower, LearnedLowerAgent)

        self.buffer = SubProblemBuffer(config.lower_training.buffer_capacity)
        self.stage = "warmup"
        self.epoch = 0

        self.run_dir = Path(config.out_dir) / config.run_name
        self.checkpoints = CheckpointManager(
            config.out_dir, config.run_name, telemetry=telemetry
        )

        self.warmup_validation = random_path_problems(
            validation_rng, config.warmup.validation_problems, config.warmup.validation_size
        )
        self.validation, self.references = self._validation_set(validation_rng)

    def _validation_set(
        self, rng: np.random.Generator
    ) -> Tuple[List[TspInstance], List[float]]:
        training = self.config.training
        if training.reference_dir:
            return self._load_references(Path(training.reference_dir))

        instances = [
            generate_uniform(
                training.instance_size,
                seed=int(rng.integers(SEED_BITS)),
                name=f"val_{training.instance_size}_{i:04d}",
            )
            for i in range(training.validation_instances)
        ]
        references = [tour_length(inst, farthest_insertion_tour(inst)) for inst in instances]
        return instances, references

    @staticmethod
    def _load_references(directory: Path) -> Tuple[List[TspInstance], List[float]]:
        """Instances in `directory` paired with `<stem>.tour` reference tours."""
        instances, references = [], []
        for path in sorted(directory.iterdir()):
            if path.suffix.lower() not in INSTANCE_SUFFIXES:
                continue
            tour_path = path.with_suffix(".tour")
            if not tour_path.exists():
                logger.warning(f"No reference tour for {path.name}; skipped")
                continue
            instance = load_instance(path)
            tour, _ = read_tour(tour_path.read_text())
            instances.append(instance)
            references.append(tour_length(instance, tour))
        if not instances:
            raise ValueError(f"no instance/reference pairs found in {directory}")
        logger.info(f"Loaded {len(instances)} validation references from {directory}")
        return instances, references

    # -- episodes -----------------------------------------------------------------

    def _instances(self, count: int, size: int) -> List[TspInstance]:
        return [
            generate_uniform(size, seed=int(self.instance_rng.integers(SEED_BITS)))
            for _ in range(count)
        ]

    def collect(
        self, instances: Sequence[TspInstance], upper: Any, lower: Any
    ) -> List[EpisodeResult]:
        """Run one episode per instance, in parallel when `workers` > 1; order is preserved."""
        seeds = [int(s) for s in self.action_rng.integers(SEED_BITS, size=len(instances))]

        def run(args: Tuple[TspInstance, int]) -> EpisodeResult:
            instance, seed = args
            return rollout_episode(
                instance, upper, lower, self.config, np.random.default_rng(seed)
            )

        if self.config.workers > 1 and len(instances) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                return list(pool.map(run, zip(instances, seeds)))
        return [run(item) for item in zip(instances, seeds)]

    def evaluate(self) -> Tuple[float, float]:
        """Mean length and mean gap (%) on the validation set with deterministic agents."""
        episodes = [
            rollout_episode(
                inst, self.eval_upper, self.lower, self.config, np.random.default_rng(i)
            )
            for i, inst in enumerate(self.validation)
        ]
        lengths = [ep.length for ep in episodes]
        gaps = [optimality_gap(ep.length, ref) for ep, ref in zip(episodes, self.references)]
        return float(np.mean(lengths)), float(np.mean(gaps))

    def _lower_steps(self, new_problems: int) -> List[Dict[str, float]]:
        lt = self.config.lower_training
        reports = []
        for _ in range(math.ceil(new_problems / lt.batch_size)):
            batch = self.buffer.sample(self.update_rng, lt.batch_size)
            if not batch:
                break
            reports.append(
                reinforce_update(
                    self.lower_policy,
                    self.lower_optimizer,
                    batch,
                    rollouts=lt.rollouts,
                    max_grad_norm=lt.max_grad_norm,
                    generator=self.lower_generator,
                )
            )
        return reports

    # -- stages -------------------------------------------------------------------

    def warmup_epoch(self, epoch: int) -> Dict[str, Any]:
        """
        Pre-train the lower model on sub-problems from random-upper episodes.

        Farthest insertion solves the episodes' sub-problems so the partial
        tours look like the ones seen later, independent of the untrained model.
        """
        start_time = time.perf_counter()
        wc = self.config.warmup
        lt = self.config.lower_training
        instances = self._instances(wc.instances_per_epoch, wc.instance_size)
        episodes = self.collect(instances, RandomUpperAgent(), FarthestInsertionLowerAgent())

        problems: List[PathProblem] = []
        for ep in episodes:
            problems.extend(
                PathProblem.from_subproblem(sub, ep.instance)
                for sub in ep.subproblems
                if sub.size > 2
            )
        order = self.update_rng.permutation(len(problems))
        batches = [
            [problems[int(i)] for i in order[start:start + lt.batch_size]]
            for start in range(0, len(problems), lt.batch_size)
        ]
        reports = warmup_pretrain(
            self.lower_policy,
            self.lower_optimizer,
            batches,
            rollouts=lt.rollouts,
            max_grad_norm=lt.max_grad_norm,
            generator=self.lower_generator,
        )

        gap = validation_gap(self.lower_policy, self.warmup_validation)
        return {
            "stage": "warmup",
            "epoch": epoch,
            "mean_tour_length": _mean([ep.length for ep in episodes]),
            "mean_gap_pct": gap,
            "lower_loss": _mean([r["loss"] for r in reports]),
            "lower_mean_length": _mean([r["mean_length"] for r in reports]),
            "episodes": len(episodes),
            "subproblems": len(problems),
            "wall_clock_s": time.perf_counter() - start_time,
        }

    def train_epoch(self, epoch: int) -> Dict[str, Any]:
        """Collect episodes, update the upper policy (PPO) and the lower policy (REINFORCE)."""
        start_time = time.perf_counter()
        tc = self.config.training
        instances = self._instances(tc.episodes_per_epoch, tc.instance_size)
        episodes = self.collect(instances, self.upper, self.lower)

        record: Dict[str, Any] = {
            "stage": "joint",
            "epoch": epoch,
            "mean_tour_length": _mean([ep.length for ep in episodes]),
            "episodes": len(episodes),
            "subproblems": sum(ep.steps for ep in episodes),
        }

        if self.train_upper:
            report = ppo_update(
                self.upper_policy,
                self.upper_optimizer,
                [ep.trajectory for ep in episodes],
                self.config.ppo,
                rng=self.update_rng,
            )
            record.update(
                upper_clip_loss=report["clip_loss"],
                upper_value_loss=report["value_loss"],
                upper_entropy=report["entropy"],
                upper_total_loss=report["total_loss"],
            )

        if self.train_lower and tc.joint_training:
            added = sum(self.buffer.extend(ep.subproblems, ep.instance) for ep in episodes)
            reports = self._lower_steps(added)
            record.update(
                lower_loss=_mean([r["loss"] for r in reports]),
                lower_mean_length=_mean([r["mean_length"] for r in reports]),
            )

        if epoch % tc.eval_every == 0:
            _, record["mean_gap_pct"] = self.evaluate()
        record["wall_clock_s"] = time.perf_counter() - start_time
        return record

    # -- checkpoints ----------------------------------------------------------------

    def _rng_state(self) -> Dict[str, Any]:
        return {
            "instance": self.instance_rng.bit_generator.state,
            "action": self.action_rng.bit_generator.state,
            "update": self.update_rng.bit_generator.state,
            "torch": torch.get_rng_state(),
            "lower_generator": self.lower_generator.get_state(),
        }

    def save_checkpoint(self, metrics: Optional[Dict[str, Any]] = None) -> Path:
        sections = {
            "upper": self.upper_policy.state_dict(),
            "lower": self.lower_policy.state_dict(),
            "optimizers": {
                "upper": self.upper_optimizer.state_dict(),
                "lower": self.lower_optimizer.state_dict(),
            },
            "rng": self._rng_state(),
            "trainer": {
                "stage": self.stage,
                "epoch": self.epoch,
                "buffer": self.buffer.state(),
                "config": self.config.model_dump(),
            },
        }
        return self.checkpoints.save(self.stage, self.epoch, sections, metrics)

    def resume(self, path: Union[str, Path]) -> None:
        """Restore parameters, optimizers, RNG streams and the buffer from a checkpoint."""
        payload = load_checkpoint(path, map_location=str(self.device))
        self.upper_policy.load_state_dict(payload["upper"])
        self.lower_policy.load_state_dict(payload["lower"])
        self.upper_optimizer.load_state_dict(payload["optimizers"]["upper"])
        self.lower_optimizer.load_state_dict(payload["optimizers"]["lower"])

        rng = payload["rng"]
        self.instance_rng.bit_generator.state = rng["instance"]
        self.action_rng.bit_generator.state = rng["action"]
        self.update_rng.bit_generator.state = rng["update"]
        torch.set_rng_state(rng["torch"])
        self.lower_generator.set_state(rng["lower_generator"])

        state = payload["trainer"]
        self.stage = state["stage"]
        self.epoch = int(state["epoch"])
        self.buffer.load_state(state["buffer"])
        logger.info(f"Resumed from {path} ({self.stage} epoch {self.epoch})")

    # -- driver -------------------------------------------------------------------

    def _emit(self, record: Dict[str, Any], stream: MetricsStream, result: TrainingResult) -> None:
        normalized = stream.write(record)
        result.metrics.append(normalized)
        if self.telemetry:
            self.telemetry.log_epoch(record["stage"], record["epoch"], normalized)
        result.checkpoints.append(self.save_checkpoint(normalized))
        logger.info(
            f"{record['stage']} epoch {record['epoch']}: "
            f"length={normalized['mean_tour_length']} gap={normalized['mean_gap_pct']}"
        )

    def joint_train(self) -> TrainingResult:
        """
        Run the remaining warm-up and joint epochs.

        A non-finite loss halts the run and restores the last good checkpoint.

        Returns:
            TrainingResult with checkpoint paths and metric records
        """
        self.run_dir.mkdir(parents=True, exist_ok=True)
        save_config(self.config, self.run_dir / "config.json")
        result = TrainingResult()
        stream = MetricsStream(self.run_dir / "metrics.jsonl")
        last_good = self.checkpoints.latest()

        try:
            if self.stage == "warmup":
                warmup_epochs = self.config.warmup.epochs if self.train_lower else 0
                for epoch in range(self.epoch + 1, warmup_epochs + 1):
                    self.epoch = epoch
                    self._emit(self.warmup_epoch(epoch), stream, result)
                    last_good = result.checkpoints[-1]
                self.stage, self.epoch = "joint", 0

            for epoch in range(self.epoch + 1, self.config.training.epochs + 1):
                self.epoch = epoch
                self._emit(self.train_epoch(epoch), stream, result)
                last_good = result.checkpoints[-1]
        except NonFiniteLossError as e:
            logger.error(f"Training halted at {self.stage} epoch {self.epoch}: {e}")
            if self.telemetry:
                self.telemetry.log_training_failure(self.stage, self.epoch, e)
            result.halted = True
            result.error = str(e)
            if last_good is not None:
                self.resume(last_good)
        finally:
            stream.close()
            self.checkpoints.flush()

        return result
