"""
Tests for the checkpoint manager: payloads, manifests, registry records and loading.
"""

import json
import tempfile
import threading
from pathlib import Path
from unittest.mock import MagicMock

import pytest
import torch

from src.checkpoint_manager import (
    CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
    CheckpointManager,
    load_checkpoint,
)
from tests.helpers.assertions import assert_checkpoint_files


def sections():
    return {"upper": {"w": torch.ones(2)}, "trainer": {"stage": "joint", "epoch": 1}}


class TestCheckpointSave:
    """Test writing checkpoints."""

    def test_payload_and_manifest(self):
        """Test the file layout and header."""
        with tempfile.TemporaryDirectory() as tmpdir:
            manager = CheckpointManager(tmpdir, "run")
            path = manager.save("joint", 3, sections(), metrics={"mean_gap_pct": 2.0})
            manager.flush()

            assert path == Path(tmpdir) / "run" / "joint_0003.pt"
            assert_checkpoint_files(path)
            manifest = json.loads(path.with_suffix(".meta.json").read_text())
            payload = load_checkpoint(path)

        assert manifest["sections"] == ["trainer", "upper"]
        assert manifest["metrics"] == {"mean_gap_pct": 2.0}
        assert manifest["path"] == "joint_0003.pt"
        assert payload["header"] == {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "run_name": "run",
            "stage": "joint",
            "epoch": 3,
        }
        assert torch.equal(payload["upper"]["w"], torch.ones(2))

    def test_unknown_section(self):
        """Test the section names are fixed."""
        with tempfile.TemporaryDirectory() as tmpdir:
            manager = CheckpointManager(tmpdir, "run")
            with pytest.raises(ValueError, match="weights"):
                manager.save("joint", 1, {"weights": {}})

    def test_telemetry_event(self):
        """Test checkpoint writes are reported."""
        telemetry = MagicMock()
        with tempfile.TemporaryDirectory() as tmpdir:
            manager = CheckpointManager(tmpdir, "run", telemetry=telemetry)
            path = manager.save("warmup", 1, sections(), persist_to_db=False)

        telemetry.log_checkpoint.assert_called_once_with(stage="warmup", epoch=1, path=str(path))

    @pytest.mark.asyncio
    async def test_database_record_from_event_loop(self):
        """Test the registry write is scheduled on a running loop."""
        with tempfile.TemporaryDirectory() as tmpdir:
            manager = CheckpointManager(tmpdir, "run")
            manager.save("joint", 2, sections(), metrics={"mean_gap_pct": 1.0})
            await manager.aflush()
            record = await manager.latest_recorded()

        assert record["epoch"] == 2
        assert record["metrics"] == {"mean_gap_pct": 1.0}

    @pytest.mark.asyncio
    async def test_database_record_from_thread(self):
        """Test the background-thread fallback outside an event loop."""
        with tempfile.TemporaryDirectory() as tmpdir:
            manager = CheckpointManager(tmpdir, "run", db_path=Path(tmpdir) / "registry.db")
            worker = threading.Thread(target=manager.save, args=("joint", 4, sections()))
            worker.start()
            worker.join()
            manager.flush()
            record = await manager.latest_recorded()

        assert record["epoch"] == 4

    @pytest.mark.asyncio
    async def test_sync_registry(self):
        """Test checkpoints written without a registry record are added once."""
        with tempfile.TemporaryDirectory() as tmpdir:
            manager = CheckpointManager(tmpdir, "run")
            manager.save("warmup", 1, sections(), persist_to_db=False)
            manager.save("joint", 1, sections(), metrics={"mean_gap_pct": 2.0})
            await manager.aflush()
            manager.save("joint", 2, sections(), persist_to_db=False)

            added = await manager.sync_registry()
            again = await manager.sync_registry()
            records = await manager.db.list_checkpoints("run")

        assert (added, again) == (2, 0)
        assert [(r["stage"], r["epoch"]) for r in records] == [
            ("warmup", 1),
            ("joint", 1),
            ("joint", 2),
        ]
        assert records[1]["metrics"] == {"mean_gap_pct": 2.0}


class TestCheckpointListing:
    """Test finding checkpoints on disk."""

    def test_training_order(self):
        """Test warm-up before joint, then by epoch."""
        with tempfile.TemporaryDirectory() as tmpdir:
            manager = CheckpointManager(tmpdir, "run")
            for stage, epoch in (("joint", 2), ("warmup", 10), ("joint", 1)):
                manager.save(stage, epoch, sections(), persist_to_db=False)

            listed = [(m["stage"], m["epoch"]) for m in manager.list_checkpoints()]
            latest = manager.latest()
            latest_warmup = manager.latest("warmup")

        assert listed == [("warmup", 10), ("joint", 1), ("joint", 2)]
        assert latest.name == "joint_0002.pt"
        assert latest_warmup.name == "warmup_0010.pt"

    def test_empty_run(self):
        """Test a run without checkpoints."""
        with tempfile.TemporaryDirectory() as tmpdir:
            manager = CheckpointManager(tmpdir, "nothing")
            assert manager.list_checkpoints() == []
            assert manager.latest() is None

    def test_corrupt_manifest_skipped(self):
        """Test an unreadable manifest does not hide the others."""
        with tempfile.TemporaryDirectory() as tmpdir:
            manager = CheckpointManager(tmpdir, "run")
            manager.save("joint", 1, sections(), persist_to_db=False)
            (manager.run_dir / "joint_0002.meta.json").write_text("{not json")
            assert len(manager.list_checkpoints()) == 1


class TestLoadCheckpoint:
    """Test header checks on load."""

    def test_missing_file(self):
        """Test a path that does not exist."""
        with pytest.raises(FileNotFoundError):
            load_checkpoint("/nonexistent/ckpt.pt")

    def test_foreign_file(self):
        """Test a torch file without our header."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "model.pt"
            torch.save({"state_dict": {}}, path)
            with pytest.raises(ValueError, match="not a checkpoint"):
                load_checkpoint(path)

    def test_unsupported_version(self):
        """Test a newer checkpoint version is refused."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "future.pt"
            torch.save({"header": {"format": CHECKPOINT_FORMAT, "version": 99}}, path)
            with pytest.raises(ValueError, match="version"):
                load_checkpoint(path)
