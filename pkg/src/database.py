"""
Checkpoint Database - persistent registry of training checkpoints.

Provides async database operations for recording checkpoints and finding the
latest one of a run across sessions.
"""

import aiosqlite
import json
import logging
from typing import List, Dict, Any, Optional, Union
from pathlib import Path
from datetime import datetime, timezone

logger = logging.getLogger(__name__)

STAGE_ORDER = {"warmup": 0, "joint": 1}


class CheckpointDatabase:
    """
    Async SQLite registry of checkpoints.

    Schema:
        checkpoints(
            run_name TEXT,
            stage TEXT,
            epoch INTEGER,
            path TEXT,
            created_at TEXT,
            metrics TEXT,   -- JSON
            PRIMARY KEY (run_name, stage, epoch)
        )
    """

    def __init__(self, db_path: Union[str, Path]):
        """
        Initialize checkpoint database.

        Args:
            db_path: Path to SQLite database file
        """
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self._initialized = False

    async def initialize(self) -> None:
        """Initialize database schema."""
        if self._initialized:
            return

        async with aiosqlite.connect(self.db_path) as db:
            await db.execute("""
                CREATE TABLE IF NOT EXISTS checkpoints (
                    run_name TEXT NOT NULL,
                    stage TEXT NOT NULL,
                    epoch INTEGER NOT NULL,
                    path TEXT NOT NULL,
                    created_at TEXT NOT NULL,
                    metrics TEXT,
                    PRIMARY KEY (run_name, stage, epoch)
                )
            """)
            await db.execute("""
                CREATE INDEX IF NOT EXISTS idx_run_checkpoints
                ON checkpoints(run_name)
            """)
            await db.commit()

        self._initialized = True
        logger.info(f"Checkpoint database initialized: {self.db_path}")

    @staticmethod
    def _row_to_dict(row: aiosqlite.Row) -> Dict[str, Any]:
        record = dict(row)
        if record.get("metrics"):
            record["metrics"] = json.loads(record["metrics"])
        return record

    async def save_checkpoint(
        self,
        run_name: str,
        stage: str,
        epoch: int,
        path: str,
        metrics: Optional[Dict[str, Any]] = None,
    ) -> None:
        """
        Record a checkpoint, replacing any earlier record for the same key.

        Args:
            run_name: Training run identifier
            stage: warmup or joint
            epoch: Epoch the checkpoint was taken after
            path: Checkpoint file path
            metrics: Metric record of that epoch
        """
        await self.initialize()
        now = datetime.now(timezone.utc).isoformat()
        async with aiosqlite.connect(self.db_path) as db:
            await db.execute("""
                INSERT OR REPLACE INTO checkpoints (
                    run_name, stage, epoch, path, created_at, metrics
                ) VALUES (?, ?, ?, ?, ?, ?)
            """, (
                run_name,
                stage,
                int(epoch),
                str(path),
                now,
                json.dumps(metrics, default=float) if metrics else None,
            ))
            await db.commit()
        logger.debug(f"Recorded checkpoint {run_name}/{stage}/{epoch}")

    async def list_checkpoints(
        self, run_name: str, stage: Optional[str] = None
    ) -> List[Dict[str, Any]]:
        """
        List a run's checkpoints in training order (warm-up first, then by epoch).

        Args:
            run_name: Training run identifier
            stage: Optional stage filter
        """
        await self.initialize()
        query = "SELECT * FROM checkpoints WHERE run_name = ?"
        params: tuple = (run_name,)
        if stage is not None:
            query += " AND stage = ?"
            params = (run_name, stage)

        async with aiosqlite.connect(self.db_path) as db:
            db.row_factory = aiosqlite.Row
            async with db.execute(query, params) as cursor:
                rows = await cursor.fetchall()

        records = [self._row_to_dict(row) for row in rows]
        records.sort(key=lambda r: (STAGE_ORDER.get(r["stage"], len(STAGE_ORDER)), r["epoch"]))
        return records

    async def latest(self, run_name: str, stage: Optional[str] = None) -> Optional[Dict[str, Any]]:
        """The most advanced checkpoint of a run, or None."""
        records = await self.list_checkpoints(run_name, stage)
        return records[-1] if records else None

    async def get_run_stats(self, run_name: str) -> Dict[str, Any]:
        """Checkpoint counts per stage for a run."""
        await self.initialize()
        async with aiosqlite.connect(self.db_path) as db:
            async with db.execute(
                """SELECT stage, COUNT(*) as count, MAX(epoch) as last_epoch
                   FROM checkpoints
                   WHERE run_name = ?
                   GROUP BY stage""",
                (run_name,),
            ) as cursor:
                rows = await cursor.fetchall()

        by_stage = {row[0]: {"count": row[1], "last_epoch": row[2]} for row in rows}
        return {
            "run_name": run_name,
            "total_checkpoints": sum(s["count"] for s in by_stage.values()),
            "by_stage": by_stage,
        }
