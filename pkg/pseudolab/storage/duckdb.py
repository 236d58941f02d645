"""
PseudoLab DuckDB archive

Keeps simulation runs, schedule summaries and A-IOU tables from many
invocations in one analytical database for later querying.
"""

import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import duckdb

from ..simulation.runner import RunMetrics, SummaryRow


class MetricsStore:
    """DuckDB-backed experiment archive"""

    def __init__(self, db_path: str = "pseudolab.duckdb"):
        """
        Args:
            db_path: database file path, ":memory:" for a throwaway store
        """
        self.db_path = db_path
        if db_path != ":memory:":
            Path(db_path).parent.mkdir(parents=True, exist_ok=True)
        self.conn = None
        self._initialized = False

    def initialize(self) -> None:
        if self._initialized:
            return

        self.conn = duckdb.connect(str(self.db_path))

        self.conn.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id VARCHAR PRIMARY KEY,
                created_at TIMESTAMP NOT NULL,
                schedule VARCHAR NOT NULL,
                seed BIGINT,
                checkpoints INTEGER,
                inconsistency_defined BOOLEAN
            )
        """)

        # one row per (step, class)
        self.conn.execute("""
            CREATE TABLE IF NOT EXISTS run_steps (
                run_id VARCHAR NOT NULL,
                step INTEGER NOT NULL,
                class_id INTEGER NOT NULL,
                tau DOUBLE,
                pseudo_per_image DOUBLE,
                inconsistency_cum DOUBLE,
                ema_gap DOUBLE
            )
        """)

        self.conn.execute("""
            CREATE TABLE IF NOT EXISTS summaries (
                batch_id VARCHAR NOT NULL,
                created_at TIMESTAMP NOT NULL,
                schedule VARCHAR NOT NULL,
                mean_pseudo DOUBLE,
                cv_pseudo DOUBLE,
                final_inconsistency DOUBLE,
                inconsistency_defined BOOLEAN
            )
        """)

        self.conn.execute("""
            CREATE TABLE IF NOT EXISTS aiou (
                batch_id VARCHAR NOT NULL,
                created_at TIMESTAMP NOT NULL,
                assigner VARCHAR NOT NULL,
                rho DOUBLE NOT NULL,
                mean_aiou DOUBLE,
                std_aiou DOUBLE,
                seed BIGINT
            )
        """)

        self._initialized = True

    def close(self) -> None:
        if self.conn:
            self.conn.close()
            self.conn = None
            self._initialized = False

    def __enter__(self) -> "MetricsStore":
        self.initialize()
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def store_run(self, metrics: RunMetrics, seed: Optional[int] = None) -> str:
        """
        Archive one schedule run with its per-step records.

        Returns:
            run id
        """
        self.initialize()
        run_id = str(uuid.uuid4())
        self.conn.execute("""
            INSERT INTO runs (id, created_at, schedule, seed, checkpoints, inconsistency_defined)
            VALUES (?, ?, ?, ?, ?, ?)
        """, [run_id, datetime.now(timezone.utc), metrics.schedule, seed,
              metrics.checkpoints, metrics.inconsistency_defined])

        rows = [
            [run_id, r.step, c, tau, r.pseudo_per_image, r.inconsistency_cum, r.ema_gap]
            for r in metrics.records
            for c, tau in enumerate(r.taus)
        ]
        if rows:
            self.conn.executemany("""
                INSERT INTO run_steps (run_id, step, class_id, tau, pseudo_per_image, inconsistency_cum, ema_gap)
                VALUES (?, ?, ?, ?, ?, ?, ?)
            """, rows)
        return run_id

    def store_summary(self, rows: Sequence[SummaryRow]) -> str:
        """Archive a compare_schedules summary table; returns the batch id."""
        self.initialize()
        batch_id = str(uuid.uuid4())
        now = datetime.now(timezone.utc)
        if rows:
            self.conn.executemany("""
                INSERT INTO summaries (batch_id, created_at, schedule, mean_pseudo, cv_pseudo,
                                       final_inconsistency, inconsistency_defined)
                VALUES (?, ?, ?, ?, ?, ?, ?)
            """, [
                [batch_id, now, r.schedule, r.mean_pseudo, r.cv_pseudo, r.final_inconsistency, r.inconsistency_defined]
                for r in rows
            ])
        return batch_id

    def store_aiou(self, rows: Sequence[Dict[str, Any]], seed: Optional[int] = None) -> str:
        """
        Archive an A-IOU table.

        Args:
            rows: dicts with assigner, rho, mean_aiou, std_aiou
        """
        self.initialize()
        batch_id = str(uuid.uuid4())
        now = datetime.now(timezone.utc)
        if rows:
            self.conn.executemany("""
                INSERT INTO aiou (batch_id, created_at, assigner, rho, mean_aiou, std_aiou, seed)
                VALUES (?, ?, ?, ?, ?, ?, ?)
            """, [
                [batch_id, now, r["assigner"], r["rho"], r["mean_aiou"], r["std_aiou"], seed]
                for r in rows
            ])
        return batch_id

    def get_summary(self, schedule: Optional[str] = None, limit: int = 100) -> List[Dict[str, Any]]:
        """Most recent summary rows, optionally for one schedule."""
        self.initialize()
        query = "SELECT schedule, mean_pseudo, cv_pseudo, final_inconsistency, inconsistency_defined FROM summaries WHERE 1=1"
        params: List[Any] = []
        if schedule:
            query += " AND schedule = ?"
            params.append(schedule)
        query += " ORDER BY created_at DESC, schedule LIMIT ?"
        params.append(limit)

        return [
            {
                "schedule": row[0],
                "mean_pseudo": row[1],
                "cv_pseudo": row[2],
                "final_inconsistency": row[3],
                "inconsistency_defined": row[4],
            }
            for row in self.conn.execute(query, params).fetchall()
        ]

    def get_tau_trajectory(self, run_id: str) -> List[float]:
        """Class-averaged threshold per step of a stored run."""
        self.initialize()
        result = self.conn.execute("""
            SELECT step, AVG(tau) FROM run_steps
            WHERE run_id = ?
            GROUP BY step
            ORDER BY step
        """, [run_id]).fetchall()
        return [row[1] for row in result]

    def count_runs(self) -> int:
        self.initialize()
        return self.conn.execute("SELECT COUNT(*) FROM runs").fetchone()[0]
