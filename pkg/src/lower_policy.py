"""
Lower-level policy - attention encoder-decoder for fixed-endpoint open paths.

Decoding builds a cyclic order over all sub-problem nodes. Picking either
endpoint appends the other right away, so the two endpoints are always
adjacent; cutting that edge yields the source -> target path.

Training is REINFORCE with a shared baseline: the mean return over the R
rollouts of the same problem.
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .config import LowerModelConfig
from .core import (
    NonFiniteLossError,
    OpenPath,
    TspInstance,
    cut_cycle,
    euclidean,
    optimality_gap,
    path_length,
)
from .decomposer import SubProblem
from .oracle import held_karp_path

logger = logging.getLogger(__name__)

NUM_INPUT_FEATURES = 4


@dataclass(frozen=True, eq=False)
class PathProblem:
    """
    A sub-problem in local, normalized coordinates.

    Local node i is global node `global_nodes[i]`; coordinates are translated
    to the bounding box corner and divided by its larger side, which keeps
    every length comparison unchanged.
    """

    coords: np.ndarray
    source: int
    target: int
    global_nodes: Tuple[int, ...] = ()
    scale: float = 1.0

    @classmethod
    def from_subproblem(cls, sub: SubProblem, instance: TspInstance) -> "PathProblem":
        nodes = tuple(int(v) for v in sub.nodes)
        coords, scale = normalize_points(instance.nodes[list(nodes)])
        return cls(
            coords=coords,
            source=nodes.index(sub.source),
            target=nodes.index(sub.target),
            global_nodes=nodes,
            scale=scale,
        )

    @classmethod
    def from_points(cls, points: np.ndarray, source: int = 0, target: int = 1) -> "PathProblem":
        coords, scale = normalize_points(np.asarray(points, dtype=np.float64))
        return cls(coords=coords, source=source, target=target, scale=scale)

    @property
    def size(self) -> int:
        return int(self.coords.shape[0])

    @property
    def nodes(self) -> Tuple[int, ...]:
        """Local node ids, so a PathProblem can be handed to the oracle and heuristics."""
        return tuple(range(self.size))

    def local_instance(self) -> TspInstance:
        return TspInstance(nodes=self.coords, depot=self.source)

    def features(self) -> np.ndarray:
        """(m, 4): x, y, is_source, is_target."""
        feats = np.zeros((self.size, NUM_INPUT_FEATURES), dtype=np.float64)
        feats[:, :2] = self.coords
        feats[self.source, 2] = 1.0
        feats[self.target, 3] = 1.0
        return feats

    def to_global(self, local_order: Sequence[int]) -> OpenPath:
        nodes = self.global_nodes or self.nodes
        order = tuple(nodes[int(i)] for i in local_order)
        return OpenPath(order, nodes[self.source], nodes[self.target])


def normalize_points(points: np.ndarray) -> Tuple[np.ndarray, float]:
    """Translate to the bounding box corner and divide by its max extent."""
    lo = points.min(axis=0)
    extent = float((points.max(axis=0) - lo).max())
    scale = extent if extent > 0 else 1.0
    return np.clip((points - lo) / scale, 0.0, 1.0), scale


def random_path_problems(
    rng: np.random.Generator, count: int, size: int
) -> List[PathProblem]:
    """Uniform random open-path problems with source 0 and target 1."""
    if size < 2:
        raise ValueError(f"size must be at least 2, got {size}")
    return [PathProblem.from_points(rng.random((size, 2))) for _ in range(count)]


@dataclass
class RolloutResult:
    """
    Output of a batched rollout over B problems x R rollouts (row b * R + r).

    Attributes:
        cycles: (B*R, M) cyclic orders, -1 padded
        actions: (B*R, S) chosen node per decision step (partners excluded), 0 padded
        log_probs: (B*R,) summed log-probabilities of the decisions
    """

    cycles: torch.Tensor
    actions: torch.Tensor
    log_probs: torch.Tensor
    rollouts: int

    def paths(self, problems: Sequence[PathProblem]) -> List[List[List[int]]]:
        """Local source -> target paths, grouped per problem."""
        cycles = self.cycles.cpu().numpy()
        out = []
        for b, problem in enumerate(problems):
            group = []
            for r in range(self.rollouts):
                row = cycles[b * self.rollouts + r][: problem.size]
                group.append(cut_cycle(row, problem.source, problem.target))
            out.append(group)
        return out


class LowerPolicy(nn.Module):
    """
    Self-attention encoder plus a context-attention pointer decoder.

    The decoder query is W_g * mean + W_f * first + W_l * last + W_s * source + W_t * target
    over node embeddings; a multi-head glimpse refines it and a tanh-clipped
    compatibility layer scores the candidate nodes.
    """

    def __init__(self, config: Optional[LowerModelConfig] = None):
        super().__init__()
        config = config or LowerModelConfig()
        self.config = config
        d = config.embed_dim
        self.embed_dim = d
        self.tanh_clip = config.tanh_clip

        self.input_proj = nn.Linear(NUM_INPUT_FEATURES, d)
        layer = nn.TransformerEncoderLayer(
            d_model=d,
            nhead=config.heads,
            dim_feedforward=config.feedforward_dim,
            dropout=0.0,
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            layer, num_layers=config.encoder_layers, enable_nested_tensor=False
        )

        self.w_graph = nn.Linear(d, d, bias=False)
        self.w_first = nn.Linear(d, d, bias=False)
        self.w_last = nn.Linear(d, d, bias=False)
        self.w_source = nn.Linear(d, d, bias=False)
        self.w_target = nn.Linear(d, d, bias=False)
        self.glimpse = nn.MultiheadAttention(d, config.heads, dropout=0.0, batch_first=True)
        self.project_query = nn.Linear(d, d, bias=False)
        self.project_keys = nn.Linear(d, d, bias=False)

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def _pad(self, problems: Sequence[PathProblem]) -> Tuple[torch.Tensor, torch.Tensor]:
        width = max(p.size for p in problems)
        feats = np.zeros((len(problems), width, NUM_INPUT_FEATURES), dtype=np.float64)
        valid = np.zeros((len(problems), width), dtype=bool)
        for b, problem in enumerate(problems):
            feats[b, : problem.size] = problem.features()
            valid[b, : problem.size] = True
        return (
            torch.as_tensor(feats, dtype=self.dtype, device=self.device),
            torch.as_tensor(valid, device=self.device),
        )

    def encode_batch(self, feats: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        """(B, M, 4) padded features -> (B, M, d) embeddings."""
        hidden = self.input_proj(feats)
        return self.encoder(hidden, src_key_padding_mask=~valid)

    def encode(self, problem: PathProblem) -> torch.Tensor:
        """Node embeddings (m, d) for a single problem."""
        feats, valid = self._pad([problem])
        return self.encode_batch(feats, valid)[0]

    def rollout(
        self,
        problems: Sequence[PathProblem],
        rollouts: int = 1,
        mode: str = "sample",
        generator: Optional[torch.Generator] = None,
        actions: Optional[torch.Tensor] = None,
    ) -> RolloutResult:
        """
        Decode every problem `rollouts` times.

        Args:
            problems: Problems to decode (sizes may differ)
            rollouts: Rollouts per problem
            mode: "greedy" or "sample"; ignored when `actions` is given
            generator: Torch generator used for sampling
            actions: Teacher-forced decisions (B*R, S) from an earlier rollout

        Returns:
            RolloutResult with differentiable log_probs
        """
        if rollouts < 1:
            raise ValueError(f"rollouts must be at least 1, got {rollouts}")
        if mode not in ("greedy", "sample"):
            raise ValueError(f"mode must be 'greedy' or 'sample', got '{mode}'")

        feats, valid = self._pad(problems)
        emb = self.encode_batch(feats, valid)

        R = rollouts
        emb = emb.repeat_interleave(R, dim=0)
        valid = valid.repeat_interleave(R, dim=0)
        N, M, d = emb.shape
        rows = torch.arange(N, device=emb.device)
        sizes = valid.sum(dim=1)
        source = torch.as_tensor([p.source for p in problems], device=emb.device)
        target = torch.as_tensor([p.target for p in problems], device=emb.device)
        source = source.repeat_interleave(R)
        target = target.repeat_interleave(R)

        graph = (emb * valid.unsqueeze(-1)).sum(dim=1) / sizes.unsqueeze(-1).to(emb.dtype)
        static = (
            self.w_graph(graph)
            + self.w_source(emb[rows, source])
            + self.w_target(emb[rows, target])
        )
        keys = self.project_keys(emb)

        selected = ~valid
        first = torch.full((N,), -1, dtype=torch.long, device=emb.device)
        last = torch.full((N,), -1, dtype=torch.long, device=emb.device)
        cycles = torch.full((N, M), -1, dtype=torch.long, device=emb.device)
        count = torch.zeros(N, dtype=torch.long, device=emb.device)
        steps = max(int(sizes.max()) - 1, 0)
        decisions = torch.zeros((N, steps), dtype=torch.long, device=emb.device)
        log_probs = torch.zeros(N, dtype=emb.dtype, device=emb.device)

        for step in range(steps):
            active = count < sizes
            blocked = selected.clone()
            # Finished rows keep one open slot so the softmax stays finite
            blocked[~active, 0] = False

            context = (
                static
                + self._node_term(self.w_first, emb, first)
                + self._node_term(self.w_last, emb, last)
            )
            glimpse, _ = self.glimpse(
                context.unsqueeze(1), emb, emb, key_padding_mask=blocked, need_weights=False
            )
            query = self.project_query(glimpse)
            scores = torch.bmm(query, keys.transpose(1, 2)).squeeze(1) / math.sqrt(d)
            scores = self.tanh_clip * torch.tanh(scores)
            scores = scores.masked_fill(blocked, float("-inf"))
            step_log_probs = F.log_softmax(scores, dim=-1)

            if actions is not None:
                choice = actions[:, step].to(emb.device)
            elif mode == "greedy":
                choice = step_log_probs.argmax(dim=-1)
            else:
                probs = step_log_probs.detach().exp()
                choice = torch.multinomial(probs, 1, generator=generator).squeeze(1)
            choice = torch.where(active, choice, torch.zeros_like(choice))

            picked = step_log_probs[rows, choice]
            log_probs = log_probs + torch.where(active, picked, torch.zeros_like(picked))
            decisions[:, step] = choice

            act_rows = rows[active]
            chosen = choice[active]
            cycles[act_rows, count[active]] = chosen
            selected[act_rows, chosen] = True
            count = count + active.long()
            first = torch.where(active & (first < 0), choice, first)

            none = torch.full_like(choice, -1)
            partner = torch.where(
                choice == source, target, torch.where(choice == target, source, none)
            )
            pair = active & (partner >= 0)
            pair_rows = rows[pair]
            cycles[pair_rows, count[pair]] = partner[pair]
            selected[pair_rows, partner[pair]] = True
            count = count + pair.long()
            last = torch.where(active, torch.where(pair, partner, choice), last)

        return RolloutResult(cycles=cycles, actions=decisions, log_probs=log_probs, rollouts=R)

    @staticmethod
    def _node_term(proj: nn.Linear, emb: torch.Tensor, index: torch.Tensor) -> torch.Tensor:
        rows = torch.arange(emb.shape[0], device=emb.device)
        gathered = emb[rows, index.clamp(min=0)]
        gathered = torch.where((index >= 0).unsqueeze(-1), gathered, torch.zeros_like(gathered))
        return proj(gathered)


def _local_lengths(problems: Sequence[PathProblem], paths: List[List[List[int]]]) -> np.ndarray:
    lengths = np.zeros((len(problems), len(paths[0]) if paths else 0), dtype=np.float64)
    for b, (problem, group) in enumerate(zip(problems, paths)):
        for r, order in enumerate(group):
            pts = problem.coords[order]
            lengths[b, r] = float(np.sum(euclidean(pts[:-1], pts[1:])))
    return lengths


@dataclass
class PathSolution:
    """Best rollout for one problem, in local and global node ids."""

    local_order: List[int]
    path: OpenPath
    length: float
    log_probs: torch.Tensor


def solve_problems(
    policy: LowerPolicy,
    problems: Sequence[PathProblem],
    mode: str = "greedy",
    rollouts: int = 1,
    generator: Optional[torch.Generator] = None,
) -> List[PathSolution]:
    """
    Batched inference: decode and keep the shortest rollout per problem.

    Greedy mode always uses a single rollout. Lengths are in local normalized units.
    """
    results: List[Optional[PathSolution]] = [None] * len(problems)
    pending = []
    for i, problem in enumerate(problems):
        if problem.size <= 2:
            order = [problem.source, problem.target]
            results[i] = PathSolution(
                local_order=order,
                path=problem.to_global(order),
                length=float(euclidean(problem.coords[order[0]], problem.coords[order[1]])),
                log_probs=torch.zeros(1),
            )
        else:
            pending.append(i)

    if pending:
        batch = [problems[i] for i in pending]
        R = 1 if mode == "greedy" else rollouts
        with torch.no_grad():
            result = policy.rollout(batch, rollouts=R, mode=mode, generator=generator)
        paths = result.paths(batch)
        lengths = _local_lengths(batch, paths)
        log_probs = result.log_probs.view(len(batch), R).cpu()
        for j, i in enumerate(pending):
            best = int(np.argmin(lengths[j]))
            order = paths[j][best]
            results[i] = PathSolution(
                local_order=order,
                path=batch[j].to_global(order),
                length=float(lengths[j, best]),
                log_probs=log_probs[j],
            )
    return results  # type: ignore[return-value]


def decode_rollout(
    policy: LowerPolicy,
    problem: Union[PathProblem, Tuple[SubProblem, TspInstance]],
    mode: str = "greedy",
    rollouts: int = 1,
    generator: Optional[torch.Generator] = None,
) -> Tuple[OpenPath, torch.Tensor]:
    """
    Best open path for one problem plus the log-probabilities of every rollout.

    A two-node problem returns [source, target] without running the model.
    """
    if isinstance(problem, tuple):
        problem = PathProblem.from_subproblem(*problem)
    solution = solve_problems(policy, [problem], mode, rollouts, generator)[0]
    return solution.path, solution.log_probs


def rollout_lengths(problems: Sequence[PathProblem], result: RolloutResult) -> torch.Tensor:
    """(B, R) local path lengths of every rollout."""
    return torch.as_tensor(_local_lengths(problems, result.paths(problems)))


def reinforce_loss(
    policy: LowerPolicy,
    problems: Sequence[PathProblem],
    actions: torch.Tensor,
    lengths: torch.Tensor,
    rollouts: int,
) -> Tuple[torch.Tensor, Dict[str, float]]:
    """
    Shared-baseline REINFORCE loss for fixed decisions.

    The return is -length and the baseline is the mean return over the problem's
    rollouts, so the advantages of one problem sum to zero.
    """
    result = policy.rollout(problems, rollouts=rollouts, actions=actions)
    log_probs = result.log_probs.view(len(problems), rollouts)
    returns = -lengths.to(log_probs.dtype).view(len(problems), rollouts)
    advantages = returns - returns.mean(dim=1, keepdim=True)
    loss = -(advantages.detach() * log_probs).mean()
    report = {
        "loss": float(loss.detach()),
        "mean_length": float(lengths.mean()),
        "advantage_abs_mean": float(advantages.abs().mean()),
    }
    return loss, report


def reinforce_update(
    policy: LowerPolicy,
    optimizer: torch.optim.Optimizer,
    problems: Sequence[PathProblem],
    rollouts: int = 8,
    max_grad_norm: float = 1.0,
    generator: Optional[torch.Generator] = None,
) -> Dict[str, float]:
    """
    Sample rollouts, then take one gradient step on the shared-baseline loss.

    Raises:
        NonFiniteLossError: If the loss is NaN or infinite; no step is taken
    """
    if rollouts < 2:
        raise ValueError(f"the shared baseline needs at least 2 rollouts, got {rollouts}")
    problems = [p for p in problems if p.size > 2]
    if not problems:
        return {"loss": 0.0, "mean_length": 0.0, "advantage_abs_mean": 0.0, "problems": 0.0}

    with torch.no_grad():
        sampled = policy.rollout(problems, rollouts=rollouts, mode="sample", generator=generator)
    lengths = rollout_lengths(problems, sampled)

    loss, report = reinforce_loss(policy, problems, sampled.actions, lengths, rollouts)
    if not torch.isfinite(loss):
        logger.error(f"Non-finite REINFORCE loss: {report}")
        raise NonFiniteLossError("REINFORCE loss is not finite", report)

    optimizer.zero_grad()
    loss.backward()
    torch.nn.utils.clip_grad_norm_(
        [p for group in optimizer.param_groups for p in group["params"]], max_grad_norm
    )
    optimizer.step()
    report["problems"] = float(len(problems))
    return report


def warmup_pretrain(
    policy: LowerPolicy,
    optimizer: torch.optim.Optimizer,
    problem_batches: Iterable[Sequence[PathProblem]],
    rollouts: int = 8,
    max_grad_norm: float = 1.0,
    generator: Optional[torch.Generator] = None,
) -> List[Dict[str, float]]:
    """One REINFORCE step per batch of pre-generated sub-problems."""
    reports = []
    for batch in problem_batches:
        reports.append(
            reinforce_update(policy, optimizer, batch, rollouts, max_grad_norm, generator)
        )
    if reports:
        logger.info(
            f"Warm-up pass: {len(reports)} steps, last loss {reports[-1]['loss']:.4f}"
        )
    return reports


def validation_gap(
    policy: LowerPolicy, problems: Sequence[PathProblem], mode: str = "greedy", rollouts: int = 1
) -> float:
    """Mean percentage gap of the decoded paths to the exact open-path optimum."""
    if not problems:
        raise ValueError("validation set is empty")
    solutions = solve_problems(policy, problems, mode=mode, rollouts=rollouts)
    gaps = []
    for problem, solution in zip(problems, solutions):
        local = problem.local_instance()
        _, best = held_karp_path(problem, local)
        length = path_length(local, solution.local_order)
        gaps.append(optimality_gap(length, best) if best > 0 else 0.0)
    return float(np.mean(gaps))
