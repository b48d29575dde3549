"""
Checkpoint Manager - writes, lists and restores training checkpoints.

Checkpoints are written to the filesystem immediately (torch file plus a
.meta.json manifest) and recorded in the checkpoint database asynchronously.
"""

from typing import Any, Dict, List, Optional, Union
from pathlib import Path
from datetime import datetime, timezone
import asyncio
import json
import logging
import threading

import torch

from .database import STAGE_ORDER, CheckpointDatabase

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hiertsp-checkpoint"
CHECKPOINT_VERSION = 1
SECTIONS = ("upper", "lower", "optimizers", "rng", "trainer")


class CheckpointManager:
    """
    Manages checkpoint lifecycle with dual persistence.

    This component:
    1. Writes checkpoint payloads and manifests to `checkpoint_dir/run_name/`
    2. Persists a registry record to the database in the background
    3. Lists checkpoints and finds the latest one
    4. Loads payloads after checking the versioned header
    """

    def __init__(
        self,
        checkpoint_dir: Union[str, Path],
        run_name: str,
        db_path: Optional[Union[str, Path]] = None,
        telemetry: Any = None,
    ):
        """
        Initialize checkpoint manager.

        Args:
            checkpoint_dir: Root directory for checkpoints
            run_name: Training run identifier
            db_path: Checkpoint registry database (default: checkpoint_dir/checkpoints.db)
            telemetry: TelemetryLogger instance for checkpoint events
        """
        self.checkpoint_dir = Path(checkpoint_dir)
        self.run_name = run_name
        self.run_dir = self.checkpoint_dir / run_name
        self.db = CheckpointDatabase(
            Path(db_path) if db_path else self.checkpoint_dir / "checkpoints.db"
        )
        self.telemetry = telemetry
        self._threads: List[threading.Thread] = []
        self._tasks: List[asyncio.Task] = []

    def path_for(self, stage: str, epoch: int) -> Path:
        return self.run_dir / f"{stage}_{epoch:04d}.pt"

    def save(
        self,
        stage: str,
        epoch: int,
        sections: Dict[str, Any],
        metrics: Optional[Dict[str, Any]] = None,
        persist_to_db: bool = True,
    ) -> Path:
        """
        Write a checkpoint.

        Creates:
        - {run}/{stage}_{epoch:04d}.pt        torch payload with header and sections
        - {run}/{stage}_{epoch:04d}.meta.json manifest

        Args:
            stage: warmup or joint
            epoch: Epoch just finished
            sections: Any of upper, lower, optimizers, rng, trainer
            metrics: Metric record of the epoch
            persist_to_db: Record the checkpoint in the database in the background

        Returns:
            Path of the payload file
        """
        unknown = set(sections) - set(SECTIONS)
        if unknown:
            raise ValueError(f"unknown checkpoint sections: {sorted(unknown)}")

        self.run_dir.mkdir(parents=True, exist_ok=True)
        path = self.path_for(stage, epoch)
        payload = {
            "header": {
                "format": CHECKPOINT_FORMAT,
                "version": CHECKPOINT_VERSION,
                "run_name": self.run_name,
                "stage": stage,
                "epoch": epoch,
            },
            **sections,
        }
        torch.save(payload, path)

        manifest = {
            "run_name": self.run_name,
            "stage": stage,
            "epoch": epoch,
            "path": path.name,
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "sections": sorted(sections),
            "created": datetime.now(timezone.utc).isoformat(),
            "metrics": metrics or {},
        }
        path.with_suffix(".meta.json").write_text(json.dumps(manifest, indent=2, default=float))
        logger.info(f"Checkpoint written: {path}")

        if self.telemetry:
            self.telemetry.log_checkpoint(stage=stage, epoch=epoch, path=str(path))

        if persist_to_db:
            self._schedule_persist(stage, epoch, str(path), metrics)
        return path

    def _schedule_persist(
        self, stage: str, epoch: int, path: str, metrics: Optional[Dict[str, Any]]
    ) -> None:
        try:
            task = asyncio.get_running_loop().create_task(
                self._persist_to_database(stage, epoch, path, metrics)
            )
            self._tasks.append(task)
        except RuntimeError:
            # No event loop running - run in background thread
            thread = threading.Thread(
                target=lambda: asyncio.run(self._persist_to_database(stage, epoch, path, metrics)),
                daemon=True,
            )
            thread.start()
            self._threads.append(thread)

    async def _persist_to_database(
        self, stage: str, epoch: int, path: str, metrics: Optional[Dict[str, Any]]
    ) -> None:
        try:
            await self.db.save_checkpoint(self.run_name, stage, epoch, path, metrics)
        except Exception as e:
            logger.error(f"Failed to record checkpoint in database: {e}")

    def flush(self, timeout: Optional[float] = None) -> None:
        """Wait for background database writes started from threads."""
        for thread in self._threads:
            thread.join(timeout)
        self._threads = [t for t in self._threads if t.is_alive()]

    async def aflush(self) -> None:
        """Await database writes scheduled on the running event loop."""
        if self._tasks:
            await asyncio.gather(*self._tasks)
            self._tasks.clear()

    def list_checkpoints(self, stage: Optional[str] = None) -> List[Dict[str, Any]]:
        """Manifests of this run found on disk, in training order."""
        if not self.run_dir.exists():
            return []
        manifests = []
        for meta_path in self.run_dir.glob("*.meta.json"):
            try:
                manifest = json.loads(meta_path.read_text())
            except json.JSONDecodeError as e:
                logger.warning(f"Failed to load manifest {meta_path}: {e}")
                continue
            if stage is not None and manifest.get("stage") != stage:
                continue
            manifest["path"] = str(self.run_dir / manifest["path"])
            manifests.append(manifest)
        manifests.sort(key=lambda m: (STAGE_ORDER.get(m["stage"], len(STAGE_ORDER)), m["epoch"]))
        return manifests

    def latest(self, stage: Optional[str] = None) -> Optional[Path]:
        """Path of the most advanced checkpoint on disk, or None."""
        manifests = self.list_checkpoints(stage)
        return Path(manifests[-1]["path"]) if manifests else None

    async def latest_recorded(self, stage: Optional[str] = None) -> Optional[Dict[str, Any]]:
        """Most advanced checkpoint according to the database registry."""
        return await self.db.latest(self.run_name, stage)

    async def sync_registry(self) -> int:
        """
        Record checkpoints found on disk that the registry is missing.

        Returns:
            Number of records added
        """
        recorded = {
            (r["stage"], int(r["epoch"])) for r in await self.db.list_checkpoints(self.run_name)
        }
        added = 0
        for manifest in self.list_checkpoints():
            stage, epoch = manifest["stage"], int(manifest["epoch"])
            if (stage, epoch) in recorded:
                continue
            self._schedule_persist(stage, epoch, manifest["path"], manifest.get("metrics") or None)
            added += 1
        await self.aflush()
        if added:
            logger.info(f"Registered {added} checkpoints of {self.run_name} found on disk")
        return added


def load_checkpoint(path: Union[str, Path], map_location: str = "cpu") -> Dict[str, Any]:
    """
    Load a checkpoint payload and check its header.

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: If the header is missing or from an unknown format/version
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    payload = torch.load(path, map_location=map_location, weights_only=False)
    header = payload.get("header") if isinstance(payload, dict) else None
    if not header or header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a checkpoint file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {header.get('version')} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    return payload
