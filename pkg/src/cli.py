"""
Command-line interface for the hierarchical TSP solver.

Subcommands: generate, train, solve, eval, report, checkpoints. Any config value can also
be set through environment variables prefixed with HIERTSP_ (nesting with a
double underscore, e.g. HIERTSP_DECOMPOSER__K=20).
"""

import argparse
import asyncio
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .benchmark import (
    SOLVE_SUMMARY,
    evaluate_directory,
    instance_files,
    write_evaluation,
    write_report,
)
from .checkpoint_manager import CheckpointManager
from .config import ENV_PREFIX, Config, ablation_overrides, load_config
from .core import generate_uniform
from .framework import HierarchicalSolver
from .instance_io import load_instance, save_instance, write_tour
from .telemetry import TelemetryLogger
from .trainer import JointTrainer

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT_ERROR = 1


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Config overrides from the flags that were given."""
    overrides: Dict[str, Any] = {}
    if getattr(args, "ablation", None):
        overrides = json.loads(json.dumps(ablation_overrides(args.ablation)))
    for flag, key in (("seed", "seed"), ("workers", "workers"), ("out_dir", "out_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "run_name", None):
        overrides["run_name"] = args.run_name

    solve = overrides.setdefault("solve", {})
    for flag in ("upper", "lower"):
        value = getattr(args, flag, None)
        if value is not None:
            solve[flag] = value
    external = overrides.setdefault("external", {})
    if getattr(args, "time_limit", None) is not None:
        external["time_limit"] = args.time_limit
    if getattr(args, "solver_command", None):
        external["command"] = args.solver_command
    return {key: value for key, value in overrides.items() if value != {}}


def _config(args: argparse.Namespace) -> Config:
    return load_config(args.config, overrides=_overrides(args))


def _collect_instances(paths: Sequence[str]) -> List[Path]:
    files: List[Path] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            files.extend(instance_files(path))
        elif path.exists():
            files.append(path)
        else:
            raise FileNotFoundError(f"Instance path not found: {path}")
    if not files:
        raise ValueError("no instance files given")
    return files


def generate_command(args: argparse.Namespace) -> int:
    """Write `count` uniform instances per size."""
    out_dir = Path(args.out_dir or "instances")
    seed = 0 if args.seed is None else args.seed
    written = 0
    for n in args.n:
        for i in range(args.count):
            stem = f"{args.prefix}_{n}_{i:04d}"
            instance = generate_uniform(n, seed=seed + i, name=stem)
            suffix = ".tsp" if args.format == "tsplib" else ".json"
            save_instance(instance, out_dir / f"{stem}{suffix}")
            written += 1
    print(f"Wrote {written} instances to {out_dir}")
    return EXIT_OK


def train_command(args: argparse.Namespace) -> int:
    """Warm-up and joint training; checkpoints and metrics land in out_dir/run_name."""
    config = _config(args)
    run_dir = Path(config.out_dir)
    with TelemetryLogger(run_dir / "telemetry.db") as telemetry:
        trainer = JointTrainer(config, telemetry=telemetry)
        if args.resume:
            trainer.resume(args.resume)
        result = trainer.joint_train()

    print(f"Run: {run_dir / config.run_name}")
    print(f"Epochs recorded: {len(result.metrics)}")
    if result.checkpoints:
        print(f"Last checkpoint: {result.checkpoints[-1]}")
    if result.halted:
        print(f"Error: training halted: {result.error}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    return EXIT_OK


def solve_command(args: argparse.Namespace) -> int:
    """Solve instance files; writes one .tour per instance plus a solve summary."""
    config = _config(args)
    files = _collect_instances(args.instances)
    instances = [load_instance(path) for path in files]
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with TelemetryLogger(out_dir / "telemetry.db") as telemetry:
        solver = HierarchicalSolver.from_checkpoint(args.checkpoint, config, telemetry=telemetry)
        # Tour files and summary rows are keyed on the file stem, not the NAME header
        results = [
            replace(result, instance_id=path.stem)
            for path, result in zip(files, solver.solve_many(instances))
        ]
        combo = solver.combo

    for result in results:
        tour_path = out_dir / f"{result.instance_id}.tour"
        tour_path.write_text(write_tour(result.tour, result.length, result.instance_id))
        print(
            f"{result.instance_id}: n={result.n} length={result.length:.6f} "
            f"time={result.seconds:.2f}s"
        )

    summary = {
        "combo": combo,
        "checkpoint": str(args.checkpoint) if args.checkpoint else None,
        "seed": config.seed,
        "results": [r.to_dict() for r in results],
        "mean_seconds": sum(r.seconds for r in results) / len(results),
    }
    (out_dir / SOLVE_SUMMARY).write_text(json.dumps(summary, indent=2))
    print(f"Wrote {len(results)} tours to {out_dir}")
    return EXIT_OK


def eval_command(args: argparse.Namespace) -> int:
    """Compare solved tours to reference tours; CSV + JSON summary."""
    rows = evaluate_directory(args.instances, args.tours, args.reference)
    label = args.label
    if not label:
        summary_path = Path(args.tours) / SOLVE_SUMMARY
        if summary_path.exists():
            label = json.loads(summary_path.read_text()).get("combo", "")
    out_dir = Path(args.out_dir or args.tours)
    csv_path, summary_path = write_evaluation(rows, out_dir, label=label)
    mean_gap = sum(r["gap_pct"] for r in rows) / len(rows)
    print(f"Evaluated {len(rows)} instances: mean gap {mean_gap:.2f}%")
    print(f"Wrote {csv_path} and {summary_path}")
    return EXIT_OK


def report_command(args: argparse.Namespace) -> int:
    """Plot-ready CSV series from evaluation directories and metrics files."""
    written = write_report(args.eval_dirs or [], args.out_dir or "report", args.metrics or [])
    for path in written:
        print(f"Wrote {path}")
    return EXIT_OK


async def _registry_report(manager: CheckpointManager, sync: bool) -> Dict[str, Any]:
    added = await manager.sync_registry() if sync else 0
    return {
        "added": added,
        "stats": await manager.db.get_run_stats(manager.run_name),
        "records": await manager.db.list_checkpoints(manager.run_name),
        "latest": await manager.latest_recorded(),
    }


def checkpoints_command(args: argparse.Namespace) -> int:
    """List a run's checkpoints from the registry in out_dir."""
    config = _config(args)
    manager = CheckpointManager(config.out_dir, config.run_name)
    report = asyncio.run(_registry_report(manager, args.sync))

    if args.sync:
        print(f"Registered {report['added']} checkpoints found on disk")
    stats = report["stats"]
    print(f"Run {config.run_name}: {stats['total_checkpoints']} checkpoints")
    for stage, counts in stats["by_stage"].items():
        print(f"  {stage}: {counts['count']} (last epoch {counts['last_epoch']})")
    for record in report["records"]:
        gap = (record.get("metrics") or {}).get("mean_gap_pct")
        gap_text = "-" if gap is None else f"{gap:.2f}%"
        print(f"  {record['stage']:<6} {record['epoch']:>4}  gap {gap_text:>8}  {record['path']}")
    if report["latest"]:
        print(f"Latest: {report['latest']['path']}")
    return EXIT_OK


COMMANDS = {
    "generate": generate_command,
    "train": train_command,
    "solve": solve_command,
    "eval": eval_command,
    "report": report_command,
    "checkpoints": checkpoints_command,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML config file")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--workers", type=int, help="Parallel episodes / instances")
    common.add_argument("--out-dir", dest="out_dir", help="Output directory")
    common.add_argument(
        "-v", "--verbose", action="store_true", help="Log progress and show tracebacks"
    )

    parser = argparse.ArgumentParser(
        prog="hiertsp",
        description="Hierarchical reinforcement-learning solver for large Euclidean TSP",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"""
Examples:
  # 16 uniform instances of 1000 nodes
  hiertsp generate --n 1000 --count 16 --out-dir data/n1000

  # Train with the defaults of a config file
  hiertsp train --config train.yaml --out-dir runs

  # Solve without any training
  hiertsp solve data/n1000 --upper random --lower farthest --out-dir tours/baseline

  # Gap against reference tours
  hiertsp eval --instances data/n1000 --tours tours/baseline --reference refs/n1000

  # Checkpoints of a run, registering any the registry missed
  hiertsp checkpoints --out-dir runs --run-name full --sync

Environment overrides use the prefix {ENV_PREFIX}, e.g. {ENV_PREFIX}PPO__CLIP_EPS=0.1
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="Generate uniform instances")
    gen.add_argument("--n", type=int, nargs="+", required=True, help="Instance size(s)")
    gen.add_argument("--count", type=int, default=1, help="Instances per size")
    gen.add_argument("--format", choices=["json", "tsplib"], default="json")
    gen.add_argument("--prefix", default="uniform", help="File name prefix")

    train = sub.add_parser("train", parents=[common], help="Warm-up and joint training")
    train.add_argument("--run-name", dest="run_name", help="Run identifier")
    train.add_argument("--ablation", help="Named ablation preset (e.g. no_warmup)")
    train.add_argument("--resume", help="Checkpoint to resume from")
    train.add_argument("--upper", choices=["learned", "random"])
    train.add_argument("--lower", choices=["learned", "farthest", "external"])

    solve = sub.add_parser("solve", parents=[common], help="Solve instance files")
    solve.add_argument("instances", nargs="+", help="Instance files or directories")
    solve.add_argument("--upper", choices=["learned", "random"])
    solve.add_argument("--lower", choices=["learned", "farthest", "external"])
    solve.add_argument("--checkpoint", help="Checkpoint with learned weights")
    solve.add_argument(
        "--time-limit", dest="time_limit", type=float, help="External solver limit (s)"
    )
    solve.add_argument("--solver-command", dest="solver_command", help="External solver command")

    ev = sub.add_parser("eval", parents=[common], help="Gap of solved tours vs references")
    ev.add_argument("--instances", required=True, help="Instance directory")
    ev.add_argument("--tours", required=True, help="Directory of solved .tour files")
    ev.add_argument("--reference", required=True, help="Directory of reference .tour files")
    ev.add_argument("--label", help="Label for reports (default: the solve combo)")

    rep = sub.add_parser("report", parents=[common], help="Plot-ready CSV series")
    rep.add_argument("--eval-dirs", dest="eval_dirs", nargs="*", help="Evaluation directories")
    rep.add_argument("--metrics", nargs="*", help="metrics.jsonl files of training runs")

    ckpt = sub.add_parser(
        "checkpoints", parents=[common], help="List a run's registered checkpoints"
    )
    ckpt.add_argument("--run-name", dest="run_name", help="Run identifier")
    ckpt.add_argument(
        "--sync", action="store_true", help="Register checkpoints on disk missing from the registry"
    )

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )

    try:
        return COMMANDS[args.command](args)
    except Exception as e:
        print(f"Error: {e}", file=sys.stderr)
        if args.verbose:
            import traceback
            traceback.print_exc()
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
