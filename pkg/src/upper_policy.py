"""
Upper-level policy - pseudo-image actor-critic with PPO training.

The actor outputs an independent Beta distribution per coordinate, so every
action lies in the unit square. Observations are NodeFeatures; the pseudo-image
is rebuilt inside the model so the per-node embedding is trained end to end.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
import torch
from torch import nn
from torch.distributions import Beta, Independent
import torch.nn.functional as F

from .config import PPOConfig, UpperModelConfig
from .core import NonFiniteLossError
from .featurizer import NUM_NODE_FEATURES, NodeFeatures, scatter_max

logger = logging.getLogger(__name__)

ACTION_EPS = 1e-6


def beta_distribution(alpha: torch.Tensor, beta: torch.Tensor) -> Independent:
    """Product of per-coordinate Beta distributions over the last axis."""
    return Independent(Beta(alpha, beta), 1)


def _mlp(in_dim: int, width: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(in_dim, width),
        nn.ReLU(),
        nn.Linear(width, width),
        nn.ReLU(),
        nn.Linear(width, width),
        nn.ReLU(),
        nn.Linear(width, out_dim),
    )


class UpperPolicy(nn.Module):
    """
    Actor-critic over (H, W, C) pseudo-images.

    Per-node linear embedding (11 -> C), scatter-max into the grid, a 3-layer
    CNN pooled to a fixed-size instance embedding, then 4-layer MLP heads for
    the Beta parameters and the state value.
    """

    def __init__(
        self,
        config: Optional[UpperModelConfig] = None,
        grid_h: int = 32,
        grid_w: int = 32,
    ):
        super().__init__()
        config = config or UpperModelConfig()
        self.config = config
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.channels = config.embed_channels

        last = config.cnn_channels[-1]
        pool_side = int(round(math.sqrt(config.embedding_dim / last)))
        if pool_side < 1 or pool_side * pool_side * last != config.embedding_dim:
            raise ValueError(
                f"embedding_dim={config.embedding_dim} is not last_channels * s^2 "
                f"for last_channels={last}"
            )

        self.embed = nn.Linear(NUM_NODE_FEATURES, config.embed_channels)

        layers: List[nn.Module] = []
        in_ch = config.embed_channels
        padding = config.kernel_size // 2
        for out_ch in config.cnn_channels:
            layers.append(
                nn.Conv2d(in_ch, out_ch, config.kernel_size, stride=config.stride, padding=padding)
            )
            layers.append(nn.ReLU())
            in_ch = out_ch
        layers.append(nn.AdaptiveMaxPool2d(pool_side))
        layers.append(nn.Flatten())
        self.encoder = nn.Sequential(*layers)

        self.actor = _mlp(config.embedding_dim, config.mlp_width, 4)
        self.critic = _mlp(config.embedding_dim, config.mlp_width, 1)

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def pseudo_image(self, features: NodeFeatures) -> torch.Tensor:
        """Embed every node and max-pool the embeddings per grid cell -> (H, W, C)."""
        if (features.grid_h, features.grid_w) != (self.grid_h, self.grid_w):
            raise ValueError(
                f"features use a {features.grid_h}x{features.grid_w} grid, "
                f"model expects {self.grid_h}x{self.grid_w}"
            )
        matrix = torch.as_tensor(features.matrix, dtype=self.dtype, device=self.device)
        embedded = self.embed(matrix)
        return scatter_max(embedded, features.cells, self.grid_h, self.grid_w)

    def forward(self, image: torch.Tensor) -> Tuple[Independent, torch.Tensor]:
        """
        Map pseudo-images to the action distribution and value.

        Args:
            image: (B, H, W, C) or (H, W, C)

        Returns:
            (distribution with batch shape (B,), value of shape (B,))
        """
        if image.dim() == 3:
            image = image.unsqueeze(0)
        expected = (self.grid_h, self.grid_w, self.channels)
        if image.dim() != 4 or tuple(image.shape[1:]) != expected:
            raise ValueError(f"expected image of shape (B, {expected}), got {tuple(image.shape)}")

        hidden = self.encoder(image.permute(0, 3, 1, 2))
        params = F.softplus(self.actor(hidden)) + 1.0
        dist = beta_distribution(params[:, :2], params[:, 2:])
        value = self.critic(hidden).squeeze(-1)
        return dist, value

    def evaluate_actions(
        self, observations: Sequence[NodeFeatures], actions: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Log-probability, entropy and value for stored (observation, action) pairs."""
        images = torch.stack([self.pseudo_image(obs) for obs in observations])
        dist, value = self(images)
        actions = actions.to(dtype=self.dtype, device=self.device)
        log_prob = dist.log_prob(actions.clamp(ACTION_EPS, 1.0 - ACTION_EPS))
        return log_prob, dist.entropy(), value

    @torch.no_grad()
    def act(
        self,
        features: NodeFeatures,
        mode: str = "sample",
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[np.ndarray, float, float]:
        """
        Pick an action for one observation.

        Returns:
            (point in [0,1]^2, log-probability, value estimate)
        """
        dist, value = self(self.pseudo_image(features))
        point, log_prob = sample_action(dist, mode, rng)
        return point[0].cpu().numpy().astype(np.float64), float(log_prob[0]), float(value[0])


def sample_action(
    dist: Independent,
    mode: str = "sample",
    rng: Optional[np.random.Generator] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Draw a point from the action distribution.

    Args:
        dist: Beta product distribution
        mode: "sample" or "mean" (deterministic)
        rng: Optional numpy generator; when given the draw does not touch torch's global RNG

    Returns:
        (points (B, 2) in [0, 1], log-probabilities (B,))
    """
    if mode == "mean":
        point = dist.mean
    elif mode == "sample":
        if rng is None:
            point = dist.sample()
        else:
            base = dist.base_dist
            alpha = base.concentration1.detach().cpu().double().numpy()
            beta = base.concentration0.detach().cpu().double().numpy()
            point = torch.as_tensor(rng.beta(alpha, beta), dtype=base.concentration1.dtype)
            point = point.to(base.concentration1.device)
    else:
        raise ValueError(f"mode must be 'sample' or 'mean', got '{mode}'")

    point = point.clamp(ACTION_EPS, 1.0 - ACTION_EPS)
    return point, dist.log_prob(point)


def compute_gae(
    rewards: Sequence[float],
    values: Sequence[float],
    gamma: float = 1.0,
    lam: float = 0.95,
    dones: Optional[Sequence[bool]] = None,
) -> np.ndarray:
    """
    Generalized advantage estimates for one or more concatenated episodes.

    delta_t = r_t + gamma * V(s_{t+1}) - V(s_t) and A_t = delta_t + gamma * lam * A_{t+1};
    the value after a terminal step (and after the last step) is 0.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError(f"rewards {rewards.shape} and values {values.shape} differ in length")
    T = rewards.shape[0]
    terminal = np.zeros(T, dtype=bool) if dones is None else np.array(dones, dtype=bool)
    if T:
        terminal[-1] = True

    advantages = np.zeros(T, dtype=np.float64)
    running = 0.0
    for t in reversed(range(T)):
        next_value = 0.0 if terminal[t] else values[t + 1]
        if terminal[t]:
            running = 0.0
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        advantages[t] = running
    return advantages


@dataclass
class Trajectory:
    """One upper-level episode: per-step observation, action, log-prob, reward, value, done."""

    observations: List[Any] = field(default_factory=list)
    actions: List[np.ndarray] = field(default_factory=list)
    log_probs: List[float] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    dones: List[bool] = field(default_factory=list)

    def append(
        self,
        observation: Any,
        action: np.ndarray,
        log_prob: float,
        reward: float,
        value: float,
        done: bool,
    ) -> None:
        self.observations.append(observation)
        self.actions.append(np.asarray(action, dtype=np.float64))
        self.log_probs.append(float(log_prob))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass
class RolloutBatch:
    """Flattened PPO batch with advantages and returns."""

    observations: Any
    actions: torch.Tensor
    old_log_probs: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    def take(self, index: np.ndarray) -> "RolloutBatch":
        idx = torch.as_tensor(index, dtype=torch.long)
        if isinstance(self.observations, torch.Tensor):
            obs = self.observations[idx]
        else:
            obs = [self.observations[int(i)] for i in index]
        return RolloutBatch(
            observations=obs,
            actions=self.actions[idx],
            old_log_probs=self.old_log_probs[idx],
            advantages=self.advantages[idx],
            returns=self.returns[idx],
        )


def build_batch(
    trajectories: Sequence[Trajectory],
    gamma: float = 1.0,
    lam: float = 0.95,
    dtype: torch.dtype = torch.float32,
) -> RolloutBatch:
    """Run GAE per trajectory and concatenate everything into one batch."""
    observations: List[Any] = []
    actions: List[np.ndarray] = []
    log_probs: List[float] = []
    advantages: List[np.ndarray] = []
    returns: List[np.ndarray] = []
    for traj in trajectories:
        if len(traj) == 0:
            continue
        adv = compute_gae(traj.rewards, traj.values, gamma, lam, traj.dones)
        observations.extend(traj.observations)
        actions.extend(traj.actions)
        log_probs.extend(traj.log_probs)
        advantages.append(adv)
        returns.append(adv + np.asarray(traj.values, dtype=np.float64))

    if not actions:
        raise ValueError("no transitions to build a batch from")

    return RolloutBatch(
        observations=observations,
        actions=torch.as_tensor(np.stack(actions), dtype=dtype),
        old_log_probs=torch.as_tensor(log_probs, dtype=dtype),
        advantages=torch.as_tensor(np.concatenate(advantages), dtype=dtype),
        returns=torch.as_tensor(np.concatenate(returns), dtype=dtype),
    )


def ppo_loss(
    policy: nn.Module,
    batch: RolloutBatch,
    clip_eps: float = 0.2,
    value_coef: float = 1.0,
    entropy_coef: float = 0.01,
) -> Tuple[torch.Tensor, Dict[str, float]]:
    """
    Clipped surrogate + value MSE - entropy bonus.

    `policy` is anything exposing evaluate_actions(observations, actions).
    The reported `entropy_loss` is the negative mean entropy.
    """
    log_prob, entropy, value = policy.evaluate_actions(batch.observations, batch.actions)
    advantages = batch.advantages.to(log_prob.dtype)
    ratio = torch.exp(log_prob - batch.old_log_probs.to(log_prob.dtype))
    surr1 = ratio * advantages
    surr2 = torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    clip_loss = -torch.min(surr1, surr2).mean()
    value_loss = F.mse_loss(value, batch.returns.to(value.dtype))
    mean_entropy = entropy.mean()
    total = clip_loss + value_coef * value_loss - entropy_coef * mean_entropy

    with torch.no_grad():
        clip_fraction = ((ratio - 1.0).abs() > clip_eps).to(log_prob.dtype).mean()
    report = {
        "clip_loss": float(clip_loss.detach()),
        "value_loss": float(value_loss.detach()),
        "entropy": float(mean_entropy.detach()),
        "entropy_loss": -float(mean_entropy.detach()),
        "total_loss": float(total.detach()),
        "clip_fraction": float(clip_fraction),
    }
    return total, report


def normalize_advantages(advantages: torch.Tensor) -> torch.Tensor:
    """Zero-mean unit-std advantages; a constant vector maps to zeros."""
    if advantages.numel() < 2:
        return advantages
    centered = advantages - advantages.mean()
    std = centered.std()
    if float(std) == 0.0:
        return centered
    return centered / (std + 1e-8)


def ppo_update(
    policy: nn.Module,
    optimizer: torch.optim.Optimizer,
    batch: Union[RolloutBatch, Sequence[Trajectory]],
    config: Optional[PPOConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, float]:
    """
    Run PPO epochs over a batch collected with the current (old) parameters.

    Returns:
        Loss report averaged over all minibatch steps

    Raises:
        NonFiniteLossError: On a NaN/inf loss; parameters are left at the last good step
    """
    config = config or PPOConfig()
    rng = rng or np.random.default_rng()
    if not isinstance(batch, RolloutBatch):
        batch = build_batch(batch, config.gamma, config.gae_lambda)
    if config.normalize_advantages:
        batch = replace(batch, advantages=normalize_advantages(batch.advantages))

    params = [p for group in optimizer.param_groups for p in group["params"]]
    totals: Dict[str, float] = {}
    steps = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(batch))
        for start in range(0, len(batch), config.minibatch_size):
            mini = batch.take(order[start:start + config.minibatch_size])
            loss, report = ppo_loss(
                policy, mini, config.clip_eps, config.value_coef, config.entropy_coef
            )
            if not torch.isfinite(loss):
                logger.error(f"Non-finite PPO loss at epoch {epoch}: {report}")
                raise NonFiniteLossError("PPO loss is not finite", report)

            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, config.max_grad_norm)
            optimizer.step()

            for key, value in report.items():
                totals[key] = totals.get(key, 0.0) + value
            steps += 1

    summary = {key: value / steps for key, value in totals.items()}
    summary["steps"] = float(steps)
    logger.debug(f"PPO update over {len(batch)} transitions: {summary}")
    return summary


def make_optimizer(
    module: nn.Module, lr: float = 1e-4, weight_decay: float = 1e-6
) -> torch.optim.AdamW:
    """AdamW over all trainable parameters."""
    return torch.optim.AdamW(
        [p for p in module.parameters() if p.requires_grad], lr=lr, weight_decay=weight_decay
    )
