"""
Benchmark harness - per-instance gaps and timings, and plot-ready report series.

Evaluation pairs every instance file with a solved tour and a reference tour
(`<stem>.tour` in each directory). Gaps are 100 * (L - L_ref) / L_ref and may
be negative when the solved tour beats the reference.
"""

from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union
import csv
import json
import logging

import numpy as np

from .core import InstanceFormatError, TspInstance, optimality_gap, tour_length
from .instance_io import load_instance, read_tour
from .telemetry import MetricsStream

logger = logging.getLogger(__name__)

EVAL_COLUMNS = ("instance_id", "n", "length", "ref_length", "gap_pct", "seconds")
GAP_VS_SIZE_COLUMNS = ("combo", "n", "mean_gap_pct", "mean_seconds", "instances")
ABLATION_COLUMNS = ("label", "mean_gap_pct")
TRAINING_CURVE_COLUMNS = (
    "run",
    "stage",
    "epoch",
    "mean_tour_length",
    "mean_gap_pct",
    "upper_total_loss",
    "lower_loss",
    "wall_clock_s",
)
INSTANCE_SUFFIXES = (".json", ".tsp")
SOLVE_SUMMARY = "solve_summary.json"
EVAL_CSV = "eval.csv"
EVAL_SUMMARY = "eval_summary.json"


def instance_files(directory: Union[str, Path]) -> List[Path]:
    """Instance files of a directory, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Instance directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in INSTANCE_SUFFIXES)


def load_solve_summary(tour_dir: Union[str, Path]) -> Dict[str, Any]:
    """The solve summary written beside solved tours, or an empty dict."""
    path = Path(tour_dir) / SOLVE_SUMMARY
    if not path.exists():
        return {}
    return json.loads(path.read_text())


def evaluate_instance(
    instance: TspInstance,
    tour_text: str,
    reference_text: str,
    seconds: Optional[float] = None,
    instance_id: Optional[str] = None,
) -> Dict[str, Any]:
    """
    One evaluation row. Lengths are reported in the instance's original units.
    `instance_id` defaults to the instance name.

    Raises:
        TourValidationError: If either tour is not a permutation of the instance
    """
    tour, _ = read_tour(tour_text)
    reference, _ = read_tour(reference_text)
    length = tour_length(instance, tour)
    ref_length = tour_length(instance, reference)
    return {
        "instance_id": instance_id or instance.name,
        "n": instance.n,
        "length": instance.original_length(length),
        "ref_length": instance.original_length(ref_length),
        "gap_pct": optimality_gap(length, ref_length),
        "seconds": seconds,
    }


def evaluate_directory(
    instance_dir: Union[str, Path],
    tour_dir: Union[str, Path],
    reference_dir: Union[str, Path],
) -> List[Dict[str, Any]]:
    """
    Evaluate every instance that has both a solved and a reference tour.

    Timings come from the tour directory's solve summary when present.

    Raises:
        ValueError: If no instance could be paired
    """
    tour_dir = Path(tour_dir)
    reference_dir = Path(reference_dir)
    timings = {
        row["instance_id"]: row.get("seconds")
        for row in load_solve_summary(tour_dir).get("results", [])
    }

    rows = []
    for path in instance_files(instance_dir):
        tour_path = tour_dir / f"{path.stem}.tour"
        ref_path = reference_dir / f"{path.stem}.tour"
        if not tour_path.exists() or not ref_path.exists():
            logger.warning(f"Skipping {path.name}: missing solved or reference tour")
            continue
        instance = load_instance(path)
        rows.append(
            evaluate_instance(
                instance,
                tour_path.read_text(),
                ref_path.read_text(),
                timings.get(path.stem),
                instance_id=path.stem,
            )
        )
    if not rows:
        raise ValueError(f"no instance in {instance_dir} has both a solved and a reference tour")
    logger.info(f"Evaluated {len(rows)} instances")
    return rows


def summarize(rows: Sequence[Dict[str, Any]], label: str = "") -> Dict[str, Any]:
    gaps = np.array([row["gap_pct"] for row in rows], dtype=np.float64)
    seconds = [row["seconds"] for row in rows if row.get("seconds") is not None]
    return {
        "label": label,
        "instances": len(rows),
        "mean_gap_pct": float(gaps.mean()) if gaps.size else None,
        "max_gap_pct": float(gaps.max()) if gaps.size else None,
        "min_gap_pct": float(gaps.min()) if gaps.size else None,
        "mean_seconds": float(np.mean(seconds)) if seconds else None,
        "mean_length": float(np.mean([row["length"] for row in rows])) if rows else None,
    }


def _write_csv(path: Path, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as csvfile:
        writer = csv.DictWriter(csvfile, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def write_evaluation(
    rows: Sequence[Dict[str, Any]], out_dir: Union[str, Path], label: str = ""
) -> Tuple[Path, Path]:
    """Write eval.csv (fixed columns) and eval_summary.json."""
    out_dir = Path(out_dir)
    csv_path = _write_csv(out_dir / EVAL_CSV, EVAL_COLUMNS, rows)
    summary_path = out_dir / EVAL_SUMMARY
    summary_path.write_text(json.dumps(summarize(rows, label), indent=2))
    return csv_path, summary_path


def read_evaluation(eval_dir: Union[str, Path]) -> Tuple[str, List[Dict[str, Any]]]:
    """Label and typed rows of an evaluation directory."""
    eval_dir = Path(eval_dir)
    csv_path = eval_dir / EVAL_CSV
    if not csv_path.exists():
        raise FileNotFoundError(f"No {EVAL_CSV} in {eval_dir}")
    label = eval_dir.name
    summary_path = eval_dir / EVAL_SUMMARY
    if summary_path.exists():
        label = json.loads(summary_path.read_text()).get("label") or label

    rows = []
    with csv_path.open(newline="") as csvfile:
        for raw in csv.DictReader(csvfile):
            try:
                rows.append({
                    "instance_id": raw["instance_id"],
                    "n": int(raw["n"]),
                    "length": float(raw["length"]),
                    "ref_length": float(raw["ref_length"]),
                    "gap_pct": float(raw["gap_pct"]),
                    "seconds": float(raw["seconds"]) if raw.get("seconds") else None,
                })
            except (KeyError, ValueError) as e:
                raise InstanceFormatError(f"malformed row in {csv_path}: {raw}") from e
    return label, rows


Evaluation = Tuple[str, Sequence[Dict[str, Any]]]


def gap_vs_size(evaluations: Sequence[Evaluation]) -> List[Dict[str, Any]]:
    """Mean gap and time per (combo, n)."""
    series = []
    for label, rows in evaluations:
        by_size: Dict[int, List[Dict[str, Any]]] = defaultdict(list)
        for row in rows:
            by_size[row["n"]].append(row)
        for n in sorted(by_size):
            group = by_size[n]
            seconds = [r["seconds"] for r in group if r["seconds"] is not None]
            series.append({
                "combo": label,
                "n": n,
                "mean_gap_pct": float(np.mean([r["gap_pct"] for r in group])),
                "mean_seconds": float(np.mean(seconds)) if seconds else None,
                "instances": len(group),
            })
    return series


def ablation_bars(evaluations: Sequence[Evaluation]) -> List[Dict[str, Any]]:
    return [
        {"label": label, "mean_gap_pct": float(np.mean([r["gap_pct"] for r in rows]))}
        for label, rows in evaluations
        if rows
    ]


def training_curve(metrics_files: Sequence[Union[str, Path]]) -> List[Dict[str, Any]]:
    """One row per epoch record; the run is named after the metrics file's directory."""
    rows = []
    for path in metrics_files:
        path = Path(path)
        for record in MetricsStream.read(path):
            rows.append({"run": path.parent.name, **record})
    return rows


def write_report(
    eval_dirs: Sequence[Union[str, Path]],
    out_dir: Union[str, Path],
    metrics_files: Sequence[Union[str, Path]] = (),
) -> List[Path]:
    """
    Emit the plot-ready series.

    Creates gap_vs_size.csv and ablation.csv from evaluation directories and,
    when metrics files are given, training_curve.csv.

    Returns:
        Paths of the written files
    """
    out_dir = Path(out_dir)
    evaluations = [read_evaluation(d) for d in eval_dirs]
    written = []
    if evaluations:
        written.append(
            _write_csv(out_dir / "gap_vs_size.csv", GAP_VS_SIZE_COLUMNS, gap_vs_size(evaluations))
        )
        written.append(
            _write_csv(out_dir / "ablation.csv", ABLATION_COLUMNS, ablation_bars(evaluations))
        )
    if metrics_files:
        written.append(
            _write_csv(
                out_dir / "training_curve.csv",
                TRAINING_CURVE_COLUMNS,
                training_curve(metrics_files),
            )
        )
    if not written:
        raise ValueError("nothing to report: pass evaluation directories or metrics files")
    logger.info(f"Report written to {out_dir}: {[p.name for p in written]}")
    return written
