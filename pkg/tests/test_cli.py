"""
Tests for the hiertsp command-line interface.

Runs the subcommands through main() the way a user chains them:
generate -> solve -> eval -> report, plus train and the error exits.
"""

import json

import pytest

from src.benchmark import EVAL_CSV, EVAL_SUMMARY, SOLVE_SUMMARY, read_evaluation
from src.cli import EXIT_INPUT_ERROR, EXIT_OK, build_parser, main
from src.core import validate_tour
from src.instance_io import load_instance, read_tour
from tests.helpers.test_utils import TempTestEnvironment, fixture_path

TINY_JSON = str(fixture_path("configs/tiny.json"))
TINY_YAML = str(fixture_path("configs/tiny.yaml"))


@pytest.fixture
def env():
    with TempTestEnvironment() as environment:
        yield environment


def generate(env, *extra):
    return main([
        "generate", "--n", "30", "40", "--count", "2",
        "--out-dir", str(env.instances_dir), "--seed", "1", *extra,
    ])


class TestParser:
    """Test argument parsing."""

    def test_subcommand_required(self):
        """Test running without a subcommand."""
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args([])
        assert exc.value.code == 2

    def test_invalid_choice(self):
        """Test an unknown agent name is rejected by argparse."""
        with pytest.raises(SystemExit) as exc:
            main(["solve", "x.json", "--upper", "greedy"])
        assert exc.value.code == 2

    def test_common_flags(self):
        """Test the shared flags on a subcommand."""
        args = build_parser().parse_args(
            ["solve", "a.tsp", "--seed", "4", "--workers", "2", "--time-limit", "1.5"]
        )
        assert (args.seed, args.workers, args.time_limit) == (4, 2, 1.5)


class TestGenerateCommand:
    """Test instance generation."""

    def test_json_instances(self, env, capsys):
        """Test count instances per size with stable names."""
        assert generate(env) == EXIT_OK

        names = sorted(p.name for p in env.instances_dir.iterdir())
        assert names == [
            "uniform_30_0000.json",
            "uniform_30_0001.json",
            "uniform_40_0000.json",
            "uniform_40_0001.json",
        ]
        assert load_instance(env.instances_dir / "uniform_40_0001.json").n == 40
        assert "Wrote 4 instances" in capsys.readouterr().out

    def test_tsplib_instances(self, env):
        """Test the TSPLIB output format."""
        assert generate(env, "--format", "tsplib", "--prefix", "u") == EXIT_OK
        instance = load_instance(env.instances_dir / "u_30_0000.tsp")
        assert instance.name == "u_30_0000"

    def test_same_seed_same_instances(self, env):
        """Test generation is reproducible."""
        generate(env)
        first = load_instance(env.instances_dir / "uniform_30_0000.json")
        generate(env)
        assert load_instance(env.instances_dir / "uniform_30_0000.json") == first


class TestSolveEvalReport:
    """Test the solve -> eval -> report chain without training."""

    def test_full_chain(self, env, capsys):
        """Test tours, summaries, evaluation and report files."""
        generate(env)
        assert main([
            "solve", str(env.instances_dir), "--config", TINY_JSON,
            "--upper", "random", "--lower", "farthest", "--out-dir", str(env.tours_dir),
        ]) == EXIT_OK
        assert main([
            "solve", str(env.instances_dir), "--config", TINY_JSON, "--seed", "99",
            "--out-dir", str(env.reference_dir),
        ]) == EXIT_OK

        for path in sorted(env.instances_dir.iterdir()):
            tour, length = read_tour((env.tours_dir / f"{path.stem}.tour").read_text())
            validate_tour(load_instance(path), tour)
            assert length > 0
        summary = json.loads((env.tours_dir / SOLVE_SUMMARY).read_text())
        assert summary["combo"] == "random+farthest"
        assert summary["seed"] == 3
        assert len(summary["results"]) == 4

        eval_dir = env.runs_dir / "eval"
        assert main([
            "eval", "--instances", str(env.instances_dir), "--tours", str(env.tours_dir),
            "--reference", str(env.reference_dir), "--out-dir", str(eval_dir),
        ]) == EXIT_OK
        assert (eval_dir / EVAL_CSV).exists()
        assert json.loads((eval_dir / EVAL_SUMMARY).read_text())["label"] == "random+farthest"

        report_dir = env.runs_dir / "report"
        assert main([
            "report", "--eval-dirs", str(eval_dir), "--out-dir", str(report_dir),
        ]) == EXIT_OK
        assert (report_dir / "gap_vs_size.csv").exists()
        assert (report_dir / "ablation.csv").exists()
        assert "mean gap" in capsys.readouterr().out

    def test_single_file(self, env):
        """Test solving one instance file given directly."""
        instance = fixture_path("instances/tiny5.tsp")
        assert main([
            "solve", str(instance), "--config", TINY_JSON, "--out-dir", str(env.tours_dir),
        ]) == EXIT_OK
        tour, _ = read_tour((env.tours_dir / "tiny5.tour").read_text())
        assert sorted(tour.order) == [0, 1, 2, 3, 4]

    def test_outputs_keyed_on_file_stem(self, env):
        """Test instances whose NAME header differs from the file name, shared by two files."""
        text = fixture_path("instances/tiny5.tsp").read_text()
        for stem in ("board_a", "board_b"):
            (env.instances_dir / f"{stem}.tsp").write_text(text)
        for out_dir in (env.tours_dir, env.reference_dir):
            assert main([
                "solve", str(env.instances_dir), "--config", TINY_JSON,
                "--out-dir", str(out_dir),
            ]) == EXIT_OK

        assert sorted(p.name for p in env.tours_dir.glob("*.tour")) == [
            "board_a.tour",
            "board_b.tour",
        ]
        summary = json.loads((env.tours_dir / SOLVE_SUMMARY).read_text())
        assert [r["instance_id"] for r in summary["results"]] == ["board_a", "board_b"]

        eval_dir = env.runs_dir / "eval"
        assert main([
            "eval", "--instances", str(env.instances_dir), "--tours", str(env.tours_dir),
            "--reference", str(env.reference_dir), "--out-dir", str(eval_dir),
        ]) == EXIT_OK
        _, rows = read_evaluation(eval_dir)
        assert [r["instance_id"] for r in rows] == ["board_a", "board_b"]
        assert all(r["seconds"] is not None for r in rows)


class TestTrainCommand:
    """Test training from the command line."""

    def test_train_then_solve_learned(self, env, capsys):
        """Test a tiny run writes checkpoints that the learned solver can load."""
        assert main(["train", "--config", TINY_YAML, "--out-dir", str(env.runs_dir)]) == EXIT_OK
        run_dir = env.runs_dir / "tiny"
        assert (run_dir / "metrics.jsonl").exists()
        assert (run_dir / "joint_0002.pt").exists()
        assert "Last checkpoint" in capsys.readouterr().out

        generate(env)
        assert main([
            "solve", str(env.instances_dir), "--config", TINY_YAML,
            "--checkpoint", str(run_dir / "joint_0002.pt"), "--out-dir", str(env.tours_dir),
        ]) == EXIT_OK
        summary = json.loads((env.tours_dir / SOLVE_SUMMARY).read_text())
        assert summary["combo"] == "learned+learned"

    def test_checkpoints_listing(self, env, capsys):
        """Test the registry lists a trained run and --sync restores lost records."""
        assert main(["train", "--config", TINY_YAML, "--out-dir", str(env.runs_dir)]) == EXIT_OK
        capsys.readouterr()
        listing = ["checkpoints", "--config", TINY_YAML, "--out-dir", str(env.runs_dir)]

        assert main(listing) == EXIT_OK
        out = capsys.readouterr().out
        assert "Run tiny: 3 checkpoints" in out
        assert f"Latest: {env.runs_dir / 'tiny' / 'joint_0002.pt'}" in out

        (env.runs_dir / "checkpoints.db").unlink()
        assert main([*listing, "--sync"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "Registered 3 checkpoints found on disk" in out
        assert "Run tiny: 3 checkpoints" in out

    def test_ablation_preset(self, env):
        """Test a named ablation reaches the saved run config."""
        assert main([
            "train", "--config", TINY_YAML, "--out-dir", str(env.runs_dir),
            "--ablation", "no_warmup", "--run-name", "ablate",
        ]) == EXIT_OK
        saved = json.loads((env.runs_dir / "ablate" / "config.json").read_text())
        assert saved["warmup"]["epochs"] == 0
        assert not list((env.runs_dir / "ablate").glob("warmup_*.pt"))


class TestErrorExits:
    """Test failures exit with status 1 and a message."""

    def test_missing_instance_path(self, env, capsys):
        """Test a path that does not exist."""
        code = main(["solve", str(env.instances_dir / "missing.json"), "--config", TINY_JSON])
        assert code == EXIT_INPUT_ERROR
        assert "Instance path not found" in capsys.readouterr().err

    def test_learned_without_checkpoint(self, env, capsys):
        """Test learned agents need weights."""
        generate(env)
        code = main(["solve", str(env.instances_dir), "--out-dir", str(env.tours_dir)])
        assert code == EXIT_INPUT_ERROR
        assert "needs a checkpoint" in capsys.readouterr().err

    def test_malformed_instance(self, env, capsys):
        """Test a malformed TSPLIB file."""
        code = main([
            "solve", str(fixture_path("instances/malformed.tsp")),
            "--config", TINY_JSON, "--out-dir", str(env.tours_dir),
        ])
        assert code == EXIT_INPUT_ERROR
        assert "invalid coordinate line" in capsys.readouterr().err

    def test_unknown_ablation(self, env, capsys):
        """Test an unknown ablation preset."""
        code = main(["train", "--ablation", "nothing", "--out-dir", str(env.runs_dir)])
        assert code == EXIT_INPUT_ERROR
        assert "unknown ablation" in capsys.readouterr().err

    def test_invalid_config(self, capsys):
        """Test a config with an unknown key."""
        code = main(["train", "--config", str(fixture_path("configs/unknown_key.json"))])
        assert code == EXIT_INPUT_ERROR
        assert "Invalid configuration" in capsys.readouterr().err
