"""
Tests for building and running the upper and lower agents.
"""

from unittest.mock import MagicMock

import numpy as np
import pytest
import torch

from src.agents import (
    ExternalLowerAgent,
    FarthestInsertionLowerAgent,
    LearnedLowerAgent,
    LearnedUpperAgent,
    RandomUpperAgent,
    build_lower,
    build_upper,
)
from src.core import generate_uniform
from src.decomposer import generate_subproblem, init_tour
from src.external_solver import ExternalSolverAdapter
from src.featurizer import NodeFeatures
from src.lower_policy import LowerPolicy
from src.spatial import build_knn
from src.upper_policy import UpperPolicy
from tests.helpers.assertions import assert_valid_path
from tests.helpers.test_utils import tiny_config


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def episode_start():
    """A 30-node instance, its k-NN graph and the initial 2-cycle."""
    instance = generate_uniform(30, seed=5)
    knn = build_knn(instance, 8)
    return instance, knn, init_tour(instance, knn)


class TestBuildUpper:
    """Test the upper-agent factory."""

    def test_random(self, config):
        """Test the random agent needs no policy."""
        agent = build_upper("random", config)
        assert isinstance(agent, RandomUpperAgent)
        assert agent.name == "random"
        assert agent.learnable is False

    def test_learned_uses_config_mode(self, config):
        """Test the action mode defaults to config.solve.upper_mode."""
        policy = UpperPolicy(config.upper, 8, 8)
        agent = build_upper("learned", config, policy)
        sampled = build_upper("learned", config, policy, mode="sample")

        assert isinstance(agent, LearnedUpperAgent)
        assert agent.mode == "mean"
        assert sampled.mode == "sample"
        assert (agent.grid_h, agent.grid_w) == (8, 8)

    def test_learned_without_policy(self, config):
        """Test a learned agent without weights is refused."""
        with pytest.raises(ValueError, match="checkpoint"):
            build_upper("learned", config)

    def test_unknown_name(self, config):
        """Test an unknown name lists the choices."""
        with pytest.raises(ValueError, match="random"):
            build_upper("greedy", config)


class TestBuildLower:
    """Test the lower-agent factory."""

    def test_farthest(self, config):
        """Test the farthest-insertion agent."""
        assert isinstance(build_lower("farthest", config), FarthestInsertionLowerAgent)

    def test_external_from_config(self, config):
        """Test the adapter is built from config.external."""
        config = tiny_config(external={"command": "lkh {params}", "time_limit": 2.5})
        telemetry = MagicMock()
        agent = build_lower("external", config, telemetry=telemetry)

        assert isinstance(agent, ExternalLowerAgent)
        assert agent.adapter.command == "lkh {params}"
        assert agent.adapter.time_limit == 2.5
        assert agent.adapter.telemetry is telemetry

    def test_external_prebuilt_adapter(self, config):
        """Test a given adapter is used as is."""
        adapter = ExternalSolverAdapter(command=None)
        assert build_lower("external", config, adapter=adapter).adapter is adapter

    def test_learned_rollouts(self, config):
        """Test greedy decoding uses one rollout and sampling uses the configured count."""
        policy = LowerPolicy(config.lower)
        greedy = build_lower("learned", config, policy)
        sampled = build_lower("learned", config, policy, mode="sample")

        assert isinstance(greedy, LearnedLowerAgent)
        assert (greedy.mode, greedy.rollouts) == ("greedy", 1)
        assert (sampled.mode, sampled.rollouts) == ("sample", config.lower_training.rollouts)

    def test_learned_without_policy(self, config):
        """Test a learned agent without weights is refused."""
        with pytest.raises(ValueError, match="checkpoint"):
            build_lower("learned", config)

    def test_unknown_name(self, config):
        """Test an unknown name lists the choices."""
        with pytest.raises(ValueError, match="farthest"):
            build_lower("lkh", config)


class TestAgentActions:
    """Test one step of each agent on a real partial tour."""

    def test_random_upper_point(self, episode_start):
        """Test the random action lies in the unit square."""
        instance, _, tour = episode_start
        step = RandomUpperAgent().act(instance, tour, np.random.default_rng(0))

        assert step.point.shape == (2,)
        assert np.all((step.point >= 0) & (step.point <= 1))
        assert step.observation is None

    def test_learned_upper_step(self, config, episode_start):
        """Test the learned agent records what PPO needs."""
        instance, _, tour = episode_start
        torch.manual_seed(0)
        agent = build_upper("learned", config, UpperPolicy(config.upper, 8, 8), mode="sample")
        step = agent.act(instance, tour, np.random.default_rng(0))

        assert np.all((step.point > 0) & (step.point < 1))
        assert np.isfinite(step.log_prob)
        assert np.isfinite(step.value)
        assert isinstance(step.observation, NodeFeatures)

    def test_mean_action_is_deterministic(self, config, episode_start):
        """Test the mean action ignores the generator."""
        instance, _, tour = episode_start
        torch.manual_seed(0)
        agent = build_upper("learned", config, UpperPolicy(config.upper, 8, 8))
        first = agent.act(instance, tour, np.random.default_rng(1))
        second = agent.act(instance, tour, np.random.default_rng(2))

        np.testing.assert_allclose(first.point, second.point)

    @pytest.mark.parametrize("name", ["farthest", "learned"])
    def test_lower_path_is_feasible(self, name, config, episode_start):
        """Test both lower agents keep the node set and the fragment endpoints."""
        instance, knn, tour = episode_start
        sub = generate_subproblem(knn, tour, (0.5, 0.5), 20, 12)
        torch.manual_seed(0)
        agent = build_lower(name, config, LowerPolicy(config.lower))
        path = agent.solve(sub, instance, generator=torch.Generator().manual_seed(0))

        assert_valid_path(path, sub.nodes, sub.source, sub.target)
