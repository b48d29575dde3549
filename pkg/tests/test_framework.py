"""
Tests for the HierarchicalSolver entry point.

Covers building solvers from checkpoints, solving single instances and
batches, and telemetry reporting.
"""

import tempfile
from pathlib import Path

import pytest

from src import Config, HierarchicalSolver, generate_uniform, load_config
from src.checkpoint_manager import CheckpointManager
from src.lower_policy import LowerPolicy
from src.telemetry import TelemetryLogger
from src.upper_policy import UpperPolicy
from tests.helpers.assertions import assert_valid_tour
from tests.helpers.test_utils import tiny_config

BASELINE = {"upper": "random", "lower": "farthest"}


def write_tiny_checkpoint(directory: Path) -> Path:
    """Untrained tiny policies saved the way the trainer saves them."""
    config = tiny_config()
    upper = UpperPolicy(config.upper, config.featurizer.grid_h, config.featurizer.grid_w)
    lower = LowerPolicy(config.lower)
    manager = CheckpointManager(directory, "tiny")
    return manager.save(
        "joint",
        1,
        {
            "upper": upper.state_dict(),
            "lower": lower.state_dict(),
            "trainer": {"stage": "joint", "epoch": 1, "config": config.model_dump()},
        },
        persist_to_db=False,
    )


class TestSolverConstruction:
    """Test building solvers."""

    def test_heuristic_combo_needs_no_checkpoint(self):
        """Test random + farthest builds without weights."""
        solver = HierarchicalSolver.from_checkpoint(None, tiny_config(solve=BASELINE))
        assert solver.combo == "random+farthest"

    def test_learned_without_checkpoint(self):
        """Test a learned level without a checkpoint is refused."""
        with pytest.raises(ValueError, match="needs a checkpoint"):
            HierarchicalSolver.from_checkpoint(None, tiny_config())

    def test_learned_without_policy(self):
        """Test the constructor also refuses a missing policy."""
        with pytest.raises(ValueError, match="learned upper agent"):
            HierarchicalSolver(tiny_config())

    def test_model_sections_come_from_checkpoint(self):
        """Test model shapes follow the checkpoint, not the default config."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_tiny_checkpoint(Path(tmpdir))
            # Default shapes would not fit the tiny weights
            solver = HierarchicalSolver.from_checkpoint(path, load_config(environ={}))

        assert solver.combo == "learned+learned"
        assert solver.config.featurizer.grid_h == 8
        assert solver.config.lower.encoder_layers == 1
        assert solver.config.decomposer.k == 40

    def test_mixed_combo(self):
        """Test a learned upper level with the farthest-insertion lower level."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_tiny_checkpoint(Path(tmpdir))
            config = tiny_config(solve={"upper": "learned", "lower": "farthest"})
            solver = HierarchicalSolver.from_checkpoint(path, config)

        assert solver.combo == "learned+farthest"
        assert not solver.upper.policy.training


class TestSolve:
    """Test solving instances."""

    def test_single_instance(self):
        """Test the result describes a valid tour."""
        solver = HierarchicalSolver(tiny_config(solve=BASELINE))
        instance = generate_uniform(40, seed=1, name="u40")
        result = solver.solve(instance)

        assert_valid_tour(instance, result.tour.order)
        assert result.instance_id == "u40"
        assert result.n == 40
        assert result.length > 0
        assert result.seconds >= 0
        assert result.subproblems >= 1
        assert result.to_dict()["combo"] == "random+farthest"

    def test_learned_solve_is_feasible(self):
        """Test untrained learned policies still produce valid tours."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_tiny_checkpoint(Path(tmpdir))
            solver = HierarchicalSolver.from_checkpoint(path, tiny_config())

        instance = generate_uniform(50, seed=3)
        result = solver.solve(instance)
        assert_valid_tour(instance, result.tour.order)

    def test_seeded_solve_is_reproducible(self):
        """Test the same seed gives the same tour."""
        solver = HierarchicalSolver(tiny_config(solve=BASELINE))
        instance = generate_uniform(40, seed=2)

        assert solver.solve(instance, seed=5).tour == solver.solve(instance, seed=5).tour

    def test_batch_order_and_workers(self):
        """Test results keep input order and do not depend on the worker count."""
        instances = [generate_uniform(n, seed=n, name=f"u{n}") for n in (30, 45, 60)]
        serial = HierarchicalSolver(tiny_config(solve=BASELINE)).solve_many(instances)
        parallel = HierarchicalSolver(tiny_config(solve=BASELINE, workers=3)).solve_many(
            instances
        )

        assert [r.instance_id for r in serial] == ["u30", "u45", "u60"]
        assert [r.tour for r in serial] == [r.tour for r in parallel]


class TestSolverTelemetry:
    """Test telemetry reporting."""

    def test_metrics_disabled(self):
        """Test get_metrics without telemetry."""
        metrics = HierarchicalSolver(tiny_config(solve=BASELINE)).get_metrics()
        assert metrics["telemetry_enabled"] is False

    def test_solves_are_logged(self):
        """Test each solve becomes a telemetry event."""
        with tempfile.TemporaryDirectory() as tmpdir:
            telemetry = TelemetryLogger(Path(tmpdir) / "telemetry.db")
            with HierarchicalSolver(tiny_config(solve=BASELINE), telemetry=telemetry) as solver:
                solver.solve_many([generate_uniform(30, seed=i) for i in range(2)])
                metrics = solver.get_metrics()

        assert metrics["telemetry_enabled"] is True
        assert metrics["solve_metrics"][0]["combo"] == "random+farthest"
        assert metrics["solve_metrics"][0]["solves"] == 2

    def test_default_config(self):
        """Test a solver without a config uses the defaults."""
        solver = HierarchicalSolver(Config(solve=BASELINE))
        assert solver.config.decomposer.k == 40
