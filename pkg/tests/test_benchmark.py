"""
Tests for the benchmark harness: evaluation rows, summaries and report series.
"""

import csv
import json
import tempfile
from pathlib import Path

import pytest

from src.benchmark import (
    EVAL_COLUMNS,
    SOLVE_SUMMARY,
    ablation_bars,
    evaluate_directory,
    evaluate_instance,
    gap_vs_size,
    instance_files,
    read_evaluation,
    summarize,
    training_curve,
    write_evaluation,
    write_report,
)
from src.core import Tour, TourValidationError, tour_length
from src.heuristics import farthest_insertion_tour
from src.instance_io import load_instance, write_tour
from src.telemetry import MetricsStream
from tests.helpers.test_utils import TempTestEnvironment, load_fixture, write_instances


def write_tour_file(path: Path, instance, tour: Tour) -> None:
    path.write_text(write_tour(tour, tour_length(instance, tour), instance.name))


def row(instance_id, n, gap, seconds=1.0):
    return {
        "instance_id": instance_id,
        "n": n,
        "length": 1.0 + gap / 100,
        "ref_length": 1.0,
        "gap_pct": gap,
        "seconds": seconds,
    }


class TestEvaluateInstance:
    """Test one evaluation row."""

    def test_tsplib_reference(self):
        """Test a TSPLIB reference against an identical project-format tour."""
        instance = load_instance(Path(__file__).parent / "fixtures/instances/tiny5.tsp")
        reference = load_fixture("instances/tiny5.tour")
        solved = write_tour(Tour((0, 1, 4, 2, 3)), 0.0, "tiny5")

        result = evaluate_instance(instance, solved, reference, seconds=0.5)

        assert result["gap_pct"] == pytest.approx(0.0)
        assert result["n"] == 5
        assert result["seconds"] == 0.5
        # Lengths are reported in the file's own units (0..100 square)
        assert result["ref_length"] == pytest.approx(300 + 100 * 2 ** 0.5)

    def test_invalid_tour(self):
        """Test a tour that is not a permutation."""
        instance = load_instance(Path(__file__).parent / "fixtures/instances/tiny5.tsp")
        with pytest.raises(TourValidationError):
            evaluate_instance(instance, "0\n1\n2\n", load_fixture("instances/tiny5.tour"))


class TestEvaluateDirectory:
    """Test pairing instances with solved and reference tours."""

    def test_pairs_and_timings(self):
        """Test gaps, skipped instances and timings from the solve summary."""
        with TempTestEnvironment() as env:
            instances = write_instances(env.instances_dir, [20, 30, 40])
            for instance in instances[:2]:
                tour = farthest_insertion_tour(instance)
                write_tour_file(env.reference_dir / f"{instance.name}.tour", instance, tour)
                solved = Tour.from_sequence(range(instance.n))
                write_tour_file(env.tours_dir / f"{instance.name}.tour", instance, solved)
            (env.tours_dir / SOLVE_SUMMARY).write_text(json.dumps({
                "combo": "random+farthest",
                "results": [{"instance_id": instances[0].name, "seconds": 0.25}],
            }))

            rows = evaluate_directory(env.instances_dir, env.tours_dir, env.reference_dir)

        assert [r["instance_id"] for r in rows] == [instances[0].name, instances[1].name]
        assert rows[0]["seconds"] == 0.25
        assert rows[1]["seconds"] is None
        assert all(r["gap_pct"] >= 0 for r in rows)

    def test_nothing_to_pair(self):
        """Test an instance directory without tours."""
        with TempTestEnvironment() as env:
            write_instances(env.instances_dir, [20])
            with pytest.raises(ValueError, match="both a solved and a reference"):
                evaluate_directory(env.instances_dir, env.tours_dir, env.reference_dir)

    def test_missing_directory(self):
        """Test a missing instance directory."""
        with pytest.raises(FileNotFoundError):
            instance_files("/nonexistent/instances")


class TestEvaluationFiles:
    """Test writing and reading evaluation directories."""

    def test_write_then_read(self):
        """Test the CSV columns, summary and typed rows."""
        rows = [row("a", 100, 2.0), row("b", 100, 4.0, seconds=None)]
        with tempfile.TemporaryDirectory() as tmpdir:
            csv_path, summary_path = write_evaluation(rows, tmpdir, label="learned+learned")
            with csv_path.open(newline="") as f:
                header = next(csv.reader(f))
            summary = json.loads(summary_path.read_text())
            label, loaded = read_evaluation(tmpdir)

        assert header == list(EVAL_COLUMNS)
        assert summary["mean_gap_pct"] == pytest.approx(3.0)
        assert summary["max_gap_pct"] == pytest.approx(4.0)
        assert summary["mean_seconds"] == pytest.approx(1.0)
        assert label == "learned+learned"
        assert loaded[0]["n"] == 100
        assert loaded[1]["seconds"] is None

    def test_label_defaults_to_directory(self):
        """Test an evaluation without a label is named after its directory."""
        with tempfile.TemporaryDirectory() as tmpdir:
            eval_dir = Path(tmpdir) / "baseline"
            write_evaluation([row("a", 10, 1.0)], eval_dir)
            label, _ = read_evaluation(eval_dir)
        assert label == "baseline"

    def test_malformed_row(self):
        """Test a CSV row that does not parse."""
        with tempfile.TemporaryDirectory() as tmpdir:
            (Path(tmpdir) / "eval.csv").write_text(
                ",".join(EVAL_COLUMNS) + "\na,many,1,1,0,\n"
            )
            with pytest.raises(ValueError, match="malformed row"):
                read_evaluation(tmpdir)

    def test_empty_summary(self):
        """Test summarizing no rows."""
        assert summarize([])["mean_gap_pct"] is None


class TestReportSeries:
    """Test the plot-ready series."""

    def test_gap_vs_size(self):
        """Test grouping per combo and size."""
        evaluations = [
            ("learned", [row("a", 100, 2.0), row("b", 100, 4.0), row("c", 200, 5.0, None)]),
            ("random", [row("a", 100, 8.0)]),
        ]
        series = gap_vs_size(evaluations)

        assert [(s["combo"], s["n"]) for s in series] == [
            ("learned", 100),
            ("learned", 200),
            ("random", 100),
        ]
        assert series[0]["mean_gap_pct"] == pytest.approx(3.0)
        assert series[0]["instances"] == 2
        assert series[1]["mean_seconds"] is None

    def test_ablation_bars(self):
        """Test one bar per label, skipping empty evaluations."""
        bars = ablation_bars([("full", [row("a", 10, 1.0), row("b", 10, 3.0)]), ("none", [])])
        assert bars == [{"label": "full", "mean_gap_pct": pytest.approx(2.0)}]

    def test_training_curve(self):
        """Test epoch records are tagged with their run."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "run_a" / "metrics.jsonl"
            with MetricsStream(path) as stream:
                stream.write({"stage": "joint", "epoch": 1, "mean_gap_pct": 5.0})
            rows = training_curve([path])

        assert rows[0]["run"] == "run_a"
        assert rows[0]["mean_gap_pct"] == 5.0

    def test_write_report(self):
        """Test every series file is written."""
        with tempfile.TemporaryDirectory() as tmpdir:
            eval_dir = Path(tmpdir) / "eval"
            write_evaluation([row("a", 10, 1.0)], eval_dir, label="full")
            metrics = Path(tmpdir) / "run" / "metrics.jsonl"
            with MetricsStream(metrics) as stream:
                stream.write({"stage": "warmup", "epoch": 1})

            written = write_report([eval_dir], Path(tmpdir) / "report", [metrics])
            names = [p.name for p in written]
            with (Path(tmpdir) / "report" / "training_curve.csv").open(newline="") as f:
                curve = list(csv.DictReader(f))

        assert names == ["gap_vs_size.csv", "ablation.csv", "training_curve.csv"]
        assert curve[0]["run"] == "run"
        assert curve[0]["stage"] == "warmup"

    def test_nothing_to_report(self):
        """Test an empty report request."""
        with tempfile.TemporaryDirectory() as tmpdir:
            with pytest.raises(ValueError, match="nothing to report"):
                write_report([], tmpdir)
