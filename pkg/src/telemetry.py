"""
Telemetry - structured events in SQLite and per-epoch metrics as JSON lines.

Events cover:
- Solves (instance, size, length, wall-clock, upper/lower combination)
- Training epochs (stage, epoch, metric payload)
- External solver calls (success/failure, duration, errors)
- Checkpoints written
"""

import sqlite3
import json
import logging
import threading
from typing import Dict, Any, Optional, List, Union
from pathlib import Path
from datetime import datetime, timezone

logger = logging.getLogger(__name__)

METRIC_KEYS = (
    "stage",
    "epoch",
    "mean_tour_length",
    "mean_gap_pct",
    "upper_clip_loss",
    "upper_value_loss",
    "upper_entropy",
    "upper_total_loss",
    "lower_loss",
    "lower_mean_length",
    "episodes",
    "subproblems",
    "wall_clock_s",
)


def _timestamp() -> str:
    # Same layout as SQLite's datetime() so range queries compare correctly
    return datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S.%f")


class TelemetryLogger:
    """
    Structured event logging with SQLite persistence.

    All events share one table with a JSON payload plus a few indexed
    columns for the common aggregations. Safe to share between worker threads.
    """

    def __init__(self, db_path: Union[str, Path]):
        """
        Initialize telemetry logger.

        Args:
            db_path: Path to SQLite database file
        """
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)

        self.connection = sqlite3.connect(str(self.db_path), check_same_thread=False)
        self.connection.row_factory = sqlite3.Row
        self._lock = threading.Lock()

        self._init_schema()
        logger.info(f"Telemetry logger initialized: {self.db_path}")

    def _init_schema(self) -> None:
        cursor = self.connection.cursor()
        cursor.execute("""
            CREATE TABLE IF NOT EXISTS events (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                timestamp TEXT NOT NULL,
                level TEXT NOT NULL,
                event_type TEXT NOT NULL,
                data TEXT NOT NULL,

                -- Indexed fields for fast queries
                instance_id TEXT,
                combo TEXT,
                stage TEXT,
                epoch INTEGER,
                success INTEGER,
                duration_ms REAL,
                error_type TEXT
            )
        """)
        cursor.execute("CREATE INDEX IF NOT EXISTS idx_timestamp ON events(timestamp)")
        cursor.execute("CREATE INDEX IF NOT EXISTS idx_event_type ON events(event_type)")
        cursor.execute("CREATE INDEX IF NOT EXISTS idx_combo ON events(combo)")
        cursor.execute("CREATE INDEX IF NOT EXISTS idx_stage_epoch ON events(stage, epoch)")
        cursor.execute("CREATE INDEX IF NOT EXISTS idx_error_type ON events(error_type)")
        self.connection.commit()

    def _log_event(
        self,
        level: str,
        event_type: str,
        data: Dict[str, Any],
        instance_id: Optional[str] = None,
        combo: Optional[str] = None,
        stage: Optional[str] = None,
        epoch: Optional[int] = None,
        success: Optional[bool] = None,
        duration_ms: Optional[float] = None,
        error_type: Optional[str] = None,
    ) -> None:
        """
        Log an event to the database and mirror a one-line summary to the logger.

        Args:
            level: Log level (INFO, WARN, ERROR, DEBUG)
            event_type: solve, epoch, external_solver, checkpoint, ...
            data: Full event data as dict
            instance_id: Instance name (solve events)
            combo: Upper/lower combination, e.g. "learned+farthest"
            stage: Training stage (warmup, joint)
            epoch: Training epoch
            success: Whether the operation succeeded
            duration_ms: Operation duration in milliseconds
            error_type: Exception class name if failed
        """
        with self._lock:
            self.connection.execute("""
                INSERT INTO events (
                    timestamp, level, event_type, data,
                    instance_id, combo, stage, epoch,
                    success, duration_ms, error_type
                ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
            """, (
                _timestamp(),
                level,
                event_type,
                json.dumps(data, default=float),
                instance_id,
                combo,
                stage,
                epoch,
                1 if success is True else (0 if success is False else None),
                duration_ms,
                error_type,
            ))
            self.connection.commit()

        log_msg = f"[{event_type}] "
        if instance_id:
            log_msg += f"{instance_id} "
        elif stage is not None:
            log_msg += f"{stage}/{epoch} "
        if success is not None:
            log_msg += "ok" if success else "failed"
        if duration_ms is not None:
            log_msg += f" ({duration_ms:.0f}ms)"
        if error_type:
            log_msg += f" - {error_type}"

        if level == "ERROR":
            logger.error(log_msg)
        elif level == "WARN":
            logger.warning(log_msg)
        else:
            logger.debug(log_msg)

    def log_solve(
        self,
        instance_id: str,
        n: int,
        length: float,
        seconds: float,
        combo: str,
        subproblems: int = 0,
    ) -> None:
        """Log one completed solve."""
        self._log_event(
            level="INFO",
            event_type="solve",
            data={"n": n, "length": length, "seconds": seconds, "subproblems": subproblems},
            instance_id=instance_id,
            combo=combo,
            success=True,
            duration_ms=seconds * 1000,
        )

    def log_epoch(self, stage: str, epoch: int, metrics: Dict[str, Any]) -> None:
        """Log the metric record of a finished training epoch."""
        self._log_event(
            level="INFO",
            event_type="epoch",
            data=metrics,
            stage=stage,
            epoch=epoch,
            success=True,
            duration_ms=float(metrics.get("wall_clock_s", 0.0)) * 1000,
        )

    def log_training_failure(self, stage: str, epoch: int, error: Exception) -> None:
        """Log a training run halted by an error."""
        data: Dict[str, Any] = {"error_message": str(error)}
        report = getattr(error, "report", None)
        if report:
            data["report"] = report
        self._log_event(
            level="ERROR",
            event_type="training_halt",
            data=data,
            stage=stage,
            epoch=epoch,
            success=False,
            error_type=type(error).__name__,
        )

    def log_external_solver(
        self,
        nodes: int,
        success: bool,
        duration_ms: float,
        error: Optional[Exception] = None,
    ) -> None:
        """
        Log one external solver call.

        Args:
            nodes: Sub-problem size
            success: False when the adapter fell back to farthest insertion
            duration_ms: Call duration in milliseconds
            error: Exception behind the fallback
        """
        data: Dict[str, Any] = {"nodes": nodes}
        error_type = None
        if error:
            error_type = type(error).__name__
            data["error_message"] = str(error)

        self._log_event(
            level="WARN" if not success else "DEBUG",
            event_type="external_solver",
            data=data,
            success=success,
            duration_ms=duration_ms,
            error_type=error_type,
        )

    def log_checkpoint(self, stage: str, epoch: int, path: str) -> None:
        """Log a checkpoint write."""
        self._log_event(
            level="INFO",
            event_type="checkpoint",
            data={"path": path},
            stage=stage,
            epoch=epoch,
            success=True,
        )

    def get_solve_metrics(self) -> List[Dict[str, Any]]:
        """
        Aggregate solves per upper/lower combination.

        Returns:
            One row per combo with count, mean length and mean seconds
        """
        cursor = self.connection.cursor()
        cursor.execute("""
            SELECT
                combo,
                COUNT(*) as solves,
                ROUND(AVG(json_extract(data, '$.length')), 6) as mean_length,
                ROUND(AVG(duration_ms) / 1000.0, 4) as mean_seconds
            FROM events
            WHERE event_type = 'solve'
            GROUP BY combo
            ORDER BY solves DESC
        """)
        return [dict(row) for row in cursor.fetchall()]

    def get_epoch_metrics(self, stage: Optional[str] = None) -> List[Dict[str, Any]]:
        """Epoch records in insertion order, optionally for one stage."""
        cursor = self.connection.cursor()
        if stage is None:
            cursor.execute("SELECT data FROM events WHERE event_type = 'epoch' ORDER BY id")
        else:
            cursor.execute(
                "SELECT data FROM events WHERE event_type = 'epoch' AND stage = ? ORDER BY id",
                (stage,),
            )
        return [json.loads(row["data"]) for row in cursor.fetchall()]

    def get_error_patterns(self) -> List[Dict[str, Any]]:
        """
        Get common error patterns.

        Returns:
            List of error types with occurrence counts
        """
        cursor = self.connection.cursor()
        cursor.execute("""
            SELECT
                error_type,
                event_type,
                COUNT(*) as occurrences,
                MAX(timestamp) as last_seen
            FROM events
            WHERE success = 0 AND error_type IS NOT NULL
            GROUP BY error_type, event_type
            ORDER BY occurrences DESC
            LIMIT 20
        """)
        return [dict(row) for row in cursor.fetchall()]

    def get_health_snapshot(self, hours: int = 24) -> Dict[str, Any]:
        """
        Get success rates per event type for the last N hours.

        Args:
            hours: Number of hours to look back
        """
        cursor = self.connection.cursor()
        cursor.execute("""
            SELECT
                event_type,
                COUNT(*) as total,
                SUM(CASE WHEN success = 1 THEN 1 ELSE 0 END) as successful,
                SUM(CASE WHEN success = 0 THEN 1 ELSE 0 END) as failed,
                ROUND(100.0 * SUM(CASE WHEN success = 1 THEN 1 ELSE 0 END) / COUNT(*), 2)
                    as success_rate_pct,
                ROUND(AVG(duration_ms), 2) as avg_duration_ms
            FROM events
            WHERE timestamp >= datetime('now', '-' || ? || ' hours')
            GROUP BY event_type
        """, (hours,))

        return {"hours": hours, "metrics": [dict(row) for row in cursor.fetchall()]}

    def close(self) -> None:
        """Close database connection."""
        if self.connection:
            self.connection.close()
            logger.info("Telemetry logger closed")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


class MetricsStream:
    """Append-only JSON-lines file with one metric record per epoch."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = self.path.open("a", encoding="utf-8")

    def write(self, record: Dict[str, Any]) -> Dict[str, Any]:
        """
        Append one record; missing metric keys are written as null.

        Returns:
            The normalized record
        """
        unknown = set(record) - set(METRIC_KEYS)
        if unknown:
            raise ValueError(f"unknown metric keys: {sorted(unknown)}")
        normalized = {key: record.get(key) for key in METRIC_KEYS}
        self._handle.write(json.dumps(normalized, sort_keys=True) + "\n")
        self._handle.flush()
        return normalized

    @staticmethod
    def read(path: Union[str, Path]) -> List[Dict[str, Any]]:
        """Load every record of a metrics file."""
        records = []
        with Path(path).open(encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return records

    def close(self) -> None:
        if not self._handle.closed:
            self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
